"""Transition-quality metrics over a pluggable frame embedder.

* ``sim_frames`` - temporal coherence: cosine between consecutive frames.
* ``sim_scenes`` - semantic similarity: per frame, cosine to the closer scene.
* ``sim_text``   - video-text alignment: cosine to a rendered caption anchor.
* ``frechet_distance`` - Frechet distance between Gaussian fits of two
  embedding sets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import VideoClip, parse_caption, render_clip

EMBEDDERS = ("pooled", "flatten", "codec")


def _blocks(size: int, parts: int) -> list[np.ndarray]:
    return np.array_split(np.arange(size), parts)


class Embedder:
    """Maps a 3 x h x w frame to a unit vector.

    ``pooled``: 4x4 average-pooled colour channels and grayscale plus the
    per-channel standard deviation. ``flatten``: raw pixels. ``codec``: the
    codec's latent. An all-zero feature vector maps to the canonical unit
    vector ``ones / sqrt(d)``.
    """

    def __init__(self, kind: str = "pooled", codec=None, grid: int = 4):
        if kind not in EMBEDDERS:
            raise ValueError(f"unknown embedder {kind!r}; choose from {EMBEDDERS}")
        if kind == "codec" and codec is None:
            raise ValueError("the codec embedder needs a codec")
        self.kind = kind
        self.codec = codec
        self.grid = grid

    def features(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.ndim != 3 or frame.shape[0] != 3:
            raise ValueError(f"frames must be 3 x h x w, got {frame.shape}")
        if self.kind == "flatten":
            return frame.ravel()
        if self.kind == "codec":
            return np.asarray(self.codec.encode_frames(frame[None].astype(np.float32)), dtype=np.float64).ravel()
        gray = frame.mean(axis=0, keepdims=True)
        stack = np.concatenate([frame, gray])
        rows, cols = _blocks(frame.shape[1], self.grid), _blocks(frame.shape[2], self.grid)
        pooled = np.array([[[ch[np.ix_(r, c)].mean() for c in cols] for r in rows] for ch in stack])
        return np.concatenate([pooled.ravel(), frame.reshape(3, -1).std(axis=1)])

    def embed(self, frame: np.ndarray) -> np.ndarray:
        v = self.features(frame)
        norm = np.linalg.norm(v)
        if not np.isfinite(norm):
            raise ValueError("non-finite frame features")
        if norm < 1e-12:
            return np.full(v.shape, 1.0 / np.sqrt(v.size))
        return v / norm

    def embed_many(self, frames) -> np.ndarray:
        return np.stack([self.embed(f) for f in frames])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors, clipped to [-1, 1] against round-off."""
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


@dataclass
class Score:
    value: float
    trace: np.ndarray

    @property
    def min(self) -> float:
        return float(self.trace.min())


def _frames_of(clip) -> np.ndarray:
    return clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)


def sim_frames(clip, emb: Embedder) -> Score:
    frames = _frames_of(clip)
    if len(frames) < 2:
        raise ValueError("temporal coherence needs at least 2 frames")
    e = emb.embed_many(frames)
    trace = np.array([cosine(e[i], e[i + 1]) for i in range(len(e) - 1)])
    return Score(float(trace.mean()), trace)


def sim_scenes(clip, s1: np.ndarray, s2: np.ndarray, emb: Embedder, mode: str = "max") -> Score:
    """Per frame: ``max`` (default) or ``mean`` of the cosines to the two scenes."""
    frames = _frames_of(clip)
    if len(frames) < 1:
        raise ValueError("empty clip")
    if mode not in ("max", "mean"):
        raise ValueError(f"unknown aggregation {mode!r}")
    e1, e2 = emb.embed(s1), emb.embed(s2)
    pairs = np.array([[cosine(e, e1), cosine(e, e2)] for e in emb.embed_many(frames)])
    trace = pairs.max(axis=1) if mode == "max" else pairs.mean(axis=1)
    return Score(float(trace.mean()), trace)


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 1e-12 else np.full(v.shape, 1.0 / np.sqrt(v.size))


class TextAnchor:
    """Embeds a vocabulary caption via the clip rendered from its spec.

    The anchor is the normalised mean of the rendered frames' embeddings, so a
    clip rendered from the same spec scores exactly 1.
    """

    def __init__(self, h: int = 16, w: int = 16, n: int = 16):
        self.h, self.w, self.n = h, w, n

    def __call__(self, caption: str, emb: Embedder) -> np.ndarray:
        spec = parse_caption(caption)
        frames = render_clip(spec, self.n, self.h, self.w).frames
        return _unit(emb.embed_many(frames).mean(axis=0))


def sim_text(clip, caption: str, emb: Embedder, anchor: TextAnchor | None = None) -> Score:
    """Cosine between the clip's normalised mean frame embedding and the caption anchor."""
    frames = _frames_of(clip)
    if anchor is None:
        anchor = TextAnchor(frames.shape[2], frames.shape[3])
    a = anchor(caption, emb)
    e = emb.embed_many(frames)
    mean = _unit(e.mean(axis=0))
    trace = np.array([cosine(v, a) for v in e])
    return Score(cosine(mean, a), trace)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _trace_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    """``Tr((s1 s2)^{1/2})`` via the symmetric form ``sqrt(s1) s2 sqrt(s1)``."""
    r = _psd_sqrt(s1)
    vals = np.linalg.eigvalsh(r @ s2 @ r)
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def gaussian_fit(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 2:
        raise ValueError("need at least 2 samples for a covariance")
    return x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False))


def frechet_from_stats(mu1, cov1, mu2, cov2) -> float:
    diff = np.asarray(mu1) - np.asarray(mu2)
    cross = 0.5 * (_trace_sqrt_product(cov1, cov2) + _trace_sqrt_product(cov2, cov1))
    d2 = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * cross)
    return max(d2, 0.0)


def frechet_distance(set_a, set_b) -> float:
    """Squared Frechet distance between Gaussian fits (sample covariance, ddof=1)."""
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    mu1, cov1 = gaussian_fit(a)
    mu2, cov2 = gaussian_fit(b)
    return frechet_from_stats(mu1, cov1, mu2, cov2)


@dataclass
class MetricsReport:
    sim_text: float
    sim_scenes: float
    sim_frames: float
    text_trace: np.ndarray
    scenes_trace: np.ndarray
    frames_trace: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def sim_frames_min(self) -> float:
        return float(np.min(self.frames_trace))

    def to_text(self) -> str:
        lines = [f"{k}: {v}" for k, v in sorted(self.metadata.items())]
        lines += [
            f"sim_text: {self.sim_text!r}",
            f"sim_scenes: {self.sim_scenes!r}",
            f"sim_frames: {self.sim_frames!r}",
            f"sim_frames_min: {self.sim_frames_min!r}",
            "text_trace: " + " ".join(repr(float(v)) for v in self.text_trace),
            "scenes_trace: " + " ".join(repr(float(v)) for v in self.scenes_trace),
            "frames_trace: " + " ".join(repr(float(v)) for v in self.frames_trace),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values: dict[str, str] = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition(":")
                values[key.strip()] = value.strip()
        traces = {k: np.array([float(v) for v in values.pop(k).split()]) for k in ("text_trace", "scenes_trace", "frames_trace")}
        scalars = {k: float(values.pop(k)) for k in ("sim_text", "sim_scenes", "sim_frames")}
        values.pop("sim_frames_min", None)
        return cls(**scalars, **traces, metadata=values)


def evaluate_transition(
    clip, s1, s2, caption: str, emb: Embedder, anchor: TextAnchor | None = None,
    scenes_mode: str = "max", clip_id: str = "",
) -> MetricsReport:
    text = sim_text(clip, caption, emb, anchor)
    scenes = sim_scenes(clip, s1, s2, emb, scenes_mode)
    frames = sim_frames(clip, emb)
    return MetricsReport(
        sim_text=text.value,
        sim_scenes=scenes.value,
        sim_frames=frames.value,
        text_trace=text.trace,
        scenes_trace=scenes.trace,
        frames_trace=frames.trace,
        metadata={"embedder": emb.kind, "clip": clip_id, "scenes_mode": scenes_mode},
    )
