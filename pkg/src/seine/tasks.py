"""Conditional sampling and the tasks built on it.

All tasks reduce to :func:`generate_conditional` with a task-specific frame
mask: transition (first and last frame visible), autoregressive prediction
(leading overlap frames visible) and image animation (first frame visible).
Visible frames are written back verbatim after decoding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import VideoClip, parse_caption, render_clip, DEFAULT_FPS
from .denoiser import Denoiser, predict_noise
from .diffusion import NoiseSchedule, ddim_invert_step, ddim_step, ddim_timesteps
from .masks import animation_mask, apply_mask, assemble_input, prediction_mask, transition_mask

DEFAULT_DDIM_STEPS = 50


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


@torch.no_grad()
def _eps(model: Denoiser, z: np.ndarray, mask, z0m: np.ndarray, t: int, text: torch.Tensor) -> np.ndarray:
    cond = assemble_input(z, mask, z0m)
    out = predict_noise(model, torch.from_numpy(np.ascontiguousarray(cond)), t, text)
    return out.numpy().astype(z.dtype)


@torch.no_grad()
def sample_ddim(
    model: Denoiser,
    sched: NoiseSchedule,
    z_T: np.ndarray,
    mask,
    z0_masked: np.ndarray,
    caption: str,
    steps: int = DEFAULT_DDIM_STEPS,
    eta: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Run the DDIM chain from ``z_T`` (at step T) down to step 0."""
    text = model.embed_caption(caption)
    ts = ddim_timesteps(sched, steps)
    if ts[-1] != sched.T:
        raise ValueError("the DDIM grid must end at T")
    z = np.asarray(z_T, dtype=np.float32)
    for t, t_prev in zip(ts[::-1], ts[::-1][1:] + [0]):
        eps = _eps(model, z, mask, z0_masked, t, text)
        noise = None
        if eta > 0:
            noise = (rng or np.random.default_rng()).standard_normal(z.shape).astype(np.float32)
        z = ddim_step(z, eps, t, t_prev, sched, eta=eta, noise=noise).astype(np.float32)
    return z


@torch.no_grad()
def invert_ddim(
    model: Denoiser,
    sched: NoiseSchedule,
    z0: np.ndarray,
    mask,
    z0_masked: np.ndarray,
    caption: str,
    steps: int = DEFAULT_DDIM_STEPS,
) -> np.ndarray:
    """Deterministic DDIM inversion of a clean latent up to step T.

    Each update evaluates the network at the destination step with the
    current latent.
    """
    if steps < 1:
        raise ValueError("inversion needs at least one step")
    text = model.embed_caption(caption)
    ts = ddim_timesteps(sched, steps)
    z = np.asarray(z0, dtype=np.float32)
    for t, t_next in zip([0] + ts[:-1], ts):
        eps = _eps(model, z, mask, z0_masked, t_next, text)
        z = ddim_invert_step(z, eps, t, t_next, sched).astype(np.float32)
    return z


def generate_conditional(
    model: Denoiser,
    codec,
    sched: NoiseSchedule,
    visible: dict[int, np.ndarray],
    mask,
    caption: str,
    n: int,
    seed=0,
    steps: int = DEFAULT_DDIM_STEPS,
    eta: float = 0.0,
    size: tuple[int, int] | None = None,
    fps: float = DEFAULT_FPS,
) -> VideoClip:
    """Sample an ``n``-frame clip whose mask-1 frames are the given ``visible`` frames."""
    bits = np.asarray(mask, dtype=np.uint8)
    if len(bits) != n:
        raise ValueError(f"mask length {len(bits)} != n = {n}")
    on = {int(i) for i in np.flatnonzero(bits)}
    if on != {int(i) for i in visible}:
        raise ValueError(f"visible frames {sorted(visible)} do not match mask positions {sorted(on)}")
    frames = {i: np.asarray(f, dtype=np.float32) for i, f in visible.items()}
    sizes = {f.shape for f in frames.values()}
    if len(sizes) > 1:
        raise ValueError(f"visible frames disagree in resolution: {sorted(sizes)}")
    if sizes:
        (shape,) = sizes
        if len(shape) != 3 or shape[0] != 3:
            raise ValueError(f"frames must be 3 x h x w, got {shape}")
        if size is not None and tuple(size) != shape[1:]:
            raise ValueError(f"requested size {size} differs from visible frames {shape[1:]}")
        h, w = shape[1:]
    elif size is not None:
        h, w = size
    else:
        raise ValueError("size is required when no frame is visible")

    if len(on) == n:
        out = np.stack([frames[i] for i in range(n)])
        return VideoClip(out, fps=fps, caption=caption)

    rng = _rng(seed)
    latent_shape = codec.latent_shape(n, h, w)
    z0 = np.zeros(latent_shape, dtype=np.float32)
    if on:
        idx = sorted(on)
        z0[idx] = codec.encode_frames(np.stack([frames[i] for i in idx]))
    z0m = apply_mask(z0, bits)
    z_T = rng.standard_normal(latent_shape).astype(np.float32)
    z = sample_ddim(model, sched, z_T, bits, z0m, caption, steps, eta, rng)
    out = codec.decode_frames(z)
    for i, f in frames.items():
        out[i] = f
    return VideoClip(out, fps=fps, caption=caption)


@dataclass
class TransitionRequest:
    s1: np.ndarray
    s2: np.ndarray
    caption: str
    n: int = 16
    seed: int = 0
    steps: int = DEFAULT_DDIM_STEPS
    eta: float = 0.0

    def __post_init__(self):
        self.s1 = np.asarray(self.s1, dtype=np.float32)
        self.s2 = np.asarray(self.s2, dtype=np.float32)
        if self.s1.shape != self.s2.shape:
            raise ValueError(f"scene resolutions differ: {self.s1.shape} vs {self.s2.shape}")
        if self.n < 3:
            raise ValueError("a transition needs at least 3 frames")


def transition(req: TransitionRequest, model: Denoiser, codec, sched: NoiseSchedule) -> VideoClip:
    """In-between frames for ``S1 -> S2``; frame 0 is S1 and frame n-1 is S2 exactly."""
    return generate_conditional(
        model, codec, sched, {0: req.s1, req.n - 1: req.s2}, transition_mask(req.n),
        req.caption, req.n, req.seed, req.steps, req.eta,
    )


def predict_autoregressive(
    model: Denoiser,
    codec,
    sched: NoiseSchedule,
    seed_clip: VideoClip,
    iterations: int,
    k: int = 2,
    caption: str | None = None,
    n: int = 16,
    seed: int = 0,
    steps: int = DEFAULT_DDIM_STEPS,
) -> VideoClip:
    """Extend ``seed_clip`` by ``iterations`` windows of ``n - k`` new frames.

    Each window is conditioned on the last ``k`` frames produced so far.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if len(seed_clip) < k:
        raise ValueError(f"seed clip has {len(seed_clip)} frames, need at least k = {k}")
    mask = prediction_mask(n, k)
    caption = seed_clip.caption if caption is None else caption
    frames = list(seed_clip.frames)
    for it in range(iterations):
        visible = {j: frames[len(frames) - k + j] for j in range(k)}
        window = generate_conditional(
            model, codec, sched, visible, mask, caption, n, derive_seed(seed, it), steps, fps=seed_clip.fps
        )
        frames.extend(window.frames[k:])
    return VideoClip(np.stack(frames), fps=seed_clip.fps, caption=caption)


def animate(
    image: np.ndarray,
    caption: str,
    model: Denoiser,
    codec,
    sched: NoiseSchedule,
    n: int = 16,
    seed: int = 0,
    steps: int = DEFAULT_DDIM_STEPS,
) -> VideoClip:
    """Clip that starts at ``image``; frame 0 is the image exactly."""
    return generate_conditional(model, codec, sched, {0: image}, animation_mask(n), caption, n, seed, steps)


# ---------------------------------------------------------------- stories


@dataclass
class Shot:
    caption: str = ""
    length: int = 16
    clip: VideoClip | None = None


@dataclass
class Junction:
    caption: str
    length: int = 16

    def __post_init__(self):
        if self.length < 3:
            raise ValueError("transition length must be >= 3")


@dataclass
class StoryBoard:
    shots: list[Shot]
    junctions: list[Junction] = field(default_factory=list)

    def __post_init__(self):
        if not self.shots:
            raise ValueError("a storyboard needs at least one shot")
        if len(self.junctions) != len(self.shots) - 1:
            raise ValueError(f"{len(self.shots)} shots need {len(self.shots) - 1} transitions, got {len(self.junctions)}")


@dataclass(frozen=True)
class Segment:
    start: int
    length: int
    kind: str  # "shot" | "transition"
    index: int


def parse_storyboard(text: str, base_dir=None) -> StoryBoard:
    """Line-oriented storyboard: shots and transitions alternate.

    ``shot <length> <caption>``, ``shot-video <container dir>``,
    ``transition <length> <caption>``; blank lines and ``#`` comments skipped.
    """
    from .persistence import read_video

    shots: list[Shot] = []
    junctions: list[Junction] = []
    expect_shot = True
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        if kind not in ("shot", "shot-video", "transition"):
            raise ValueError(f"line {lineno}: unknown record {kind!r}")
        if (kind in ("shot", "shot-video")) != expect_shot:
            raise ValueError(f"line {lineno}: shots and transitions must alternate, starting with a shot")
        if kind == "shot":
            length, _, caption = rest.strip().partition(" ")
            shots.append(Shot(caption=caption.strip(), length=int(length)))
        elif kind == "shot-video":
            path = Path(rest.strip())
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            clip = read_video(path)
            shots.append(Shot(caption=clip.caption, length=len(clip), clip=clip))
        else:
            length, _, caption = rest.strip().partition(" ")
            junctions.append(Junction(caption=caption.strip(), length=int(length)))
        expect_shot = not expect_shot
    if expect_shot and shots:
        raise ValueError("storyboard ends with a transition")
    return StoryBoard(shots, junctions)


def _shot_clip(shot: Shot, model, codec, sched, h: int, w: int, seed: int, steps: int) -> VideoClip:
    if shot.clip is not None:
        return shot.clip
    try:
        spec = parse_caption(shot.caption)
    except ValueError:
        # free-form caption: unconditional-on-frames text-to-video sample
        mask = np.zeros(shot.length, dtype=np.uint8)
        return generate_conditional(model, codec, sched, {}, mask, shot.caption, shot.length, seed, steps, size=(h, w))
    return render_clip(spec, shot.length, h, w)


def assemble_story(
    board: StoryBoard,
    model: Denoiser,
    codec,
    sched: NoiseSchedule,
    seed: int = 0,
    size: tuple[int, int] = (16, 16),
    steps: int = DEFAULT_DDIM_STEPS,
) -> tuple[VideoClip, list[Segment]]:
    """Concatenate shots joined by generated transitions (endpoints dropped)."""
    clips = [
        _shot_clip(s, model, codec, sched, size[0], size[1], derive_seed(seed, 0, i), steps)
        for i, s in enumerate(board.shots)
    ]
    pieces: list[np.ndarray] = [clips[0].frames]
    segments = [Segment(0, len(clips[0]), "shot", 0)]
    pos = len(clips[0])
    for j, junction in enumerate(board.junctions):
        req = TransitionRequest(
            clips[j].frames[-1], clips[j + 1].frames[0], junction.caption, junction.length,
            derive_seed(seed, 1, j), steps,
        )
        interior = transition(req, model, codec, sched).frames[1:-1]
        pieces.append(interior)
        segments.append(Segment(pos, len(interior), "transition", j))
        pos += len(interior)
        pieces.append(clips[j + 1].frames)
        segments.append(Segment(pos, len(clips[j + 1]), "shot", j + 1))
        pos += len(clips[j + 1])
    caption = " | ".join(c.caption for c in clips)
    return VideoClip(np.concatenate(pieces), fps=clips[0].fps, caption=caption), segments


def format_segments(segments: list[Segment]) -> str:
    return "".join(f"{s.kind} {s.index} {s.start} {s.length}\n" for s in segments)
