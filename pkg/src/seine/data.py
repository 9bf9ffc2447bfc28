"""Procedural captioned videos of a single shape moving over a flat background.

The caption grammar is bijective with :class:`SceneSpec` (for the default
size), so every caption parses back to the spec it was rendered from::

    a <color> <shape> <motion phrase> on a <background> background
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
}
BACKGROUNDS = {
    "black": (0.0, 0.0, 0.0),
    "white": (1.0, 1.0, 1.0),
    "gray": (0.5, 0.5, 0.5),
    "navy": (0.0, 0.0, 0.5),
}
MOTIONS = {
    "static": "standing still",
    "left-to-right": "moving left to right",
    "top-to-bottom": "moving top to bottom",
    "grow": "growing",
    "shrink": "shrinking",
}
# clips whose first and last frames differ
MOVING = ("left-to-right", "top-to-bottom", "grow", "shrink")
DEFAULT_SIZE = 0.35
# grow/shrink span radius * GROW_FROM .. radius
GROW_FROM = 0.25
DEFAULT_FPS = 8.0
SUPERSAMPLE = 4


@dataclass
class VideoClip:
    """``frames`` is an n x 3 x h x w float32 array with values in [-1, 1]."""

    frames: np.ndarray
    fps: float = DEFAULT_FPS
    caption: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[1] != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"expected n x 3 x h x w frames, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite values")
        if self.frames.min(initial=0.0) < -1.0 or self.frames.max(initial=0.0) > 1.0:
            raise ValueError("pixel values must lie in [-1, 1]")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[3]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    background: str
    motion: str
    size: float = DEFAULT_SIZE

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"unknown background {self.background!r}")
        if self.motion not in MOTIONS:
            raise ValueError(f"unknown motion {self.motion!r}")

    @property
    def caption(self) -> str:
        return f"a {self.color} {self.shape} {MOTIONS[self.motion]} on a {self.background} background"


def vocabulary() -> list[SceneSpec]:
    """Every default-size spec, in a fixed order."""
    return [
        SceneSpec(shape, color, bg, motion)
        for shape, color, bg, motion in itertools.product(SHAPES, COLORS, BACKGROUNDS, MOTIONS)
    ]


def caption_words() -> list[str]:
    """The closed word list used by captions."""
    words = {"a", "on", "background"}
    words.update(SHAPES, COLORS, BACKGROUNDS)
    for phrase in MOTIONS.values():
        words.update(phrase.split())
    return sorted(words)


_PHRASE_TO_MOTION = {phrase: motion for motion, phrase in MOTIONS.items()}


def parse_caption(caption: str) -> SceneSpec:
    """Inverse of :attr:`SceneSpec.caption`; raises ``ValueError`` off-grammar."""
    words = caption.strip().split()
    if len(words) < 7 or words[0] != "a" or words[-1] != "background" or words[-4:-2] != ["on", "a"]:
        raise ValueError(f"caption outside the controlled vocabulary: {caption!r}")
    color, shape, background = words[1], words[2], words[-2]
    phrase = " ".join(words[3:-4])
    if phrase not in _PHRASE_TO_MOTION:
        raise ValueError(f"caption outside the controlled vocabulary: {caption!r}")
    return SceneSpec(shape, color, background, _PHRASE_TO_MOTION[phrase])


def _trajectory(spec: SceneSpec, n: int, h: int, w: int):
    """Per-frame (cx, cy, radius) in pixel units."""
    radius = spec.size * min(h, w) / 2.0
    u = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    cx = np.full(n, w / 2.0)
    cy = np.full(n, h / 2.0)
    r = np.full(n, radius)
    if spec.motion == "left-to-right":
        cx = radius + u * (w - 2 * radius)
    elif spec.motion == "top-to-bottom":
        cy = radius + u * (h - 2 * radius)
    elif spec.motion == "grow":
        r = radius * (GROW_FROM + (1.0 - GROW_FROM) * u)
    elif spec.motion == "shrink":
        r = radius * (1.0 - (1.0 - GROW_FROM) * u)
    return cx, cy, r


def _coverage(shape: str, cx: float, cy: float, r: float, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    dx, dy = xs - cx, ys - cy
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    # apex up; base along y = cy + r
    inside = dy <= r
    inside &= 2 * dx <= (dy + r)
    inside &= -2 * dx <= (dy + r)
    return inside


def render_clip(spec: SceneSpec, n: int = 16, h: int = 16, w: int = 16, fps: float = DEFAULT_FPS) -> VideoClip:
    """Rasterize ``spec`` with 4x4 supersampled anti-aliasing."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if h < 8 or w < 8:
        raise ValueError("frames must be at least 8x8")
    if not 0.2 <= spec.size <= 0.5:
        raise ValueError(f"size {spec.size} would let the shape leave the frame (allowed [0.2, 0.5])")
    s = SUPERSAMPLE
    ys, xs = np.meshgrid(
        (np.arange(h * s) + 0.5) / s, (np.arange(w * s) + 0.5) / s, indexing="ij"
    )
    fg = np.asarray(COLORS[spec.color], dtype=np.float64)[:, None, None]
    bg = np.asarray(BACKGROUNDS[spec.background], dtype=np.float64)[:, None, None]
    frames = np.empty((n, 3, h, w), dtype=np.float32)
    for i, (cx, cy, r) in enumerate(zip(*_trajectory(spec, n, h, w))):
        cover = _coverage(spec.shape, cx, cy, r, xs, ys).astype(np.float64)
        alpha = cover.reshape(h, s, w, s).mean(axis=(1, 3))
        rgb = bg * (1.0 - alpha) + fg * alpha
        frames[i] = (2.0 * rgb - 1.0).astype(np.float32)
    return VideoClip(np.clip(frames, -1.0, 1.0), fps=fps, caption=spec.caption)


def make_dataset(
    count: int, seed: int, n: int = 16, h: int = 16, w: int = 16, motions: tuple[str, ...] | None = None
) -> list[VideoClip]:
    """``count`` clips with specs drawn from shuffled passes over the vocabulary.

    No spec repeats until the vocabulary is exhausted. ``motions`` restricts
    the vocabulary (e.g. to ``MOVING`` for non-degenerate transition pairs).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    vocab = vocabulary()
    if motions is not None:
        unknown = set(motions) - set(MOTIONS)
        if unknown:
            raise ValueError(f"unknown motions {sorted(unknown)}")
        vocab = [s for s in vocab if s.motion in motions]
    rng = np.random.default_rng(seed)
    order: list[int] = []
    while len(order) < count:
        order.extend(int(i) for i in rng.permutation(len(vocab)))
    return [render_clip(vocab[i], n, h, w) for i in order[:count]]


def make_scene_pair(seed: int, interval: int = 64, h: int = 16, w: int = 16, spec: SceneSpec | None = None):
    """Frames 0 and ``interval - 1`` of one rendered clip, plus its caption."""
    if interval < 2:
        raise ValueError("interval must be >= 2")
    if spec is None:
        vocab = vocabulary()
        spec = vocab[int(np.random.default_rng(seed).integers(len(vocab)))]
    clip = render_clip(spec, interval, h, w)
    return clip.frames[0].copy(), clip.frames[-1].copy(), clip.caption
