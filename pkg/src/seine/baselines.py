"""Classic transition generators used for comparison.

``cross_dissolve`` and ``latent_interp`` share :func:`lerp`, so with the
identity codec the two are bit-identical.
"""
from __future__ import annotations

import numpy as np

from .data import VideoClip
from .masks import apply_mask
from .tasks import DEFAULT_DDIM_STEPS, invert_ddim, sample_ddim


def blend_weights(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least 2 frames")
    return np.arange(n, dtype=np.float64) / (n - 1)


def lerp(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """``(1 - lam) * a + lam * b`` computed as ``a + lam * (b - a)`` in float64.

    Exact at both ends and never outside the elementwise [min, max] of a, b.
    """
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    out = a64 + lam * (b64 - a64)
    return np.clip(out, np.minimum(a64, b64), np.maximum(a64, b64)).astype(np.float32)


def slerp(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a64), np.linalg.norm(b64)
    if na == 0 or nb == 0:
        return lerp(a, b, lam)
    cos = np.clip(np.dot(a64.ravel(), b64.ravel()) / (na * nb), -1.0, 1.0)
    omega = np.arccos(cos)
    if omega < 1e-7:
        return lerp(a, b, lam)
    s = np.sin(omega)
    return (np.sin((1 - lam) * omega) / s * a64 + np.sin(lam * omega) / s * b64).astype(np.float32)


def _check_pair(s1: np.ndarray, s2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s1 = np.asarray(s1, dtype=np.float32)
    s2 = np.asarray(s2, dtype=np.float32)
    if s1.shape != s2.shape:
        raise ValueError(f"resolution mismatch: {s1.shape} vs {s2.shape}")
    if s1.ndim != 3 or s1.shape[0] != 3:
        raise ValueError(f"frames must be 3 x h x w, got {s1.shape}")
    return s1, s2


def cross_dissolve(s1: np.ndarray, s2: np.ndarray, n: int, caption: str = "") -> VideoClip:
    s1, s2 = _check_pair(s1, s2)
    frames = np.stack([np.clip(lerp(s1, s2, lam), -1.0, 1.0) for lam in blend_weights(n)])
    return VideoClip(frames, caption=caption)


# ---------------------------------------------------------------- morphing


def fit_affine(points1, points2) -> np.ndarray:
    """Least-squares 2x3 affine ``A`` with ``A @ [x, y, 1] ~= p2`` for each pair."""
    p1 = np.asarray(points1, dtype=np.float64).reshape(-1, 2)
    p2 = np.asarray(points2, dtype=np.float64).reshape(-1, 2)
    if len(p1) != len(p2):
        raise ValueError("point lists differ in length")
    if len(p1) < 3:
        raise ValueError("need at least 3 point pairs")
    design = np.hstack([p1, np.ones((len(p1), 1))])
    normal = design.T @ design
    if np.linalg.matrix_rank(normal, tol=1e-9 * max(1.0, np.abs(normal).max())) < 3:
        raise ValueError("degenerate (collinear) correspondences")
    return np.linalg.solve(normal, design.T @ p2).T


def _homogeneous(affine: np.ndarray) -> np.ndarray:
    return np.vstack([affine, [0.0, 0.0, 1.0]])


def warp_affine(img: np.ndarray, affine: np.ndarray) -> np.ndarray:
    """Forward-warp ``img`` by ``affine`` (pixel (x, y) -> affine @ (x, y, 1)).

    Inverse-mapped bilinear resampling with edge clamping.
    """
    _, h, w = img.shape
    inv = np.linalg.inv(_homogeneous(affine))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src = inv @ np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)])
    # snap round-off so exact integer coordinates sample exactly
    sx = np.clip(np.round(src[0], 9), 0, w - 1)
    sy = np.clip(np.round(src[1], 9), 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = sx - x0, sy - y0
    src_img = img.astype(np.float64)
    top = src_img[:, y0, x0] * (1 - fx) + src_img[:, y0, x1] * fx
    bottom = src_img[:, y1, x0] * (1 - fx) + src_img[:, y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return out.reshape(img.shape).astype(np.float32)


def morph_with_correspondences(s1, s2, points1, points2, n: int, caption: str = "") -> VideoClip:
    """Affine morph: warp both ends toward each other, then cross-fade."""
    s1, s2 = _check_pair(s1, s2)
    a = fit_affine(points1, points2)
    a_inv = np.linalg.inv(_homogeneous(a))[:2]
    eye = np.eye(3)[:2]
    frames = []
    for lam in blend_weights(n):
        w1 = warp_affine(s1, (1 - lam) * eye + lam * a)
        w2 = warp_affine(s2, lam * eye + (1 - lam) * a_inv)
        frames.append(np.clip(lerp(w1, w2, lam), -1.0, 1.0))
    return VideoClip(np.stack(frames), caption=caption)


def read_points(text: str) -> tuple[np.ndarray, np.ndarray]:
    """``x1 y1 x2 y2`` per line; ``#`` comments allowed."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        vals = line.split()
        if len(vals) != 4:
            raise ValueError(f"line {lineno}: expected 'x1 y1 x2 y2'")
        rows.append([float(v) for v in vals])
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    return arr[:, :2], arr[:, 2:]


# ---------------------------------------------------------------- latent methods


def latent_interp(codec, s1, s2, n: int, caption: str = "") -> VideoClip:
    """Encode both scenes, interpolate the codes, decode each frame."""
    s1, s2 = _check_pair(s1, s2)
    z1 = codec.encode_frames(s1[None])[0]
    z2 = codec.encode_frames(s2[None])[0]
    z = np.stack([lerp(z1, z2, lam) for lam in blend_weights(n)])
    return VideoClip(codec.decode_frames(z), caption=caption)


def inversion_interp(
    model,
    codec,
    sched,
    s1,
    s2,
    caption: str,
    n: int,
    steps: int = DEFAULT_DDIM_STEPS,
    spherical: bool = False,
    captions: tuple[str, str] | None = None,
) -> VideoClip:
    """DDIM-invert each scene to step T, interpolate the codes, denoise each.

    Every scene or in-between frame is treated as a one-frame video with an
    all-zero mask. ``captions`` gives each endpoint its own caption for the
    inversion (defaults to ``caption`` for both).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    s1, s2 = _check_pair(s1, s2)
    cap1, cap2 = captions or (caption, caption)
    mask = np.zeros(1, dtype=np.uint8)
    codes = []
    for scene, cap in ((s1, cap1), (s2, cap2)):
        z0 = codec.encode_frames(scene[None])
        codes.append(invert_ddim(model, sched, z0, mask, apply_mask(z0, mask), cap, steps))
    mix = slerp if spherical else lerp
    frames = []
    for lam in blend_weights(n):
        z_T = mix(codes[0], codes[1], lam)
        z = sample_ddim(model, sched, z_T, mask, np.zeros_like(z_T), caption, steps)
        frames.append(codec.decode_frames(z)[0])
    return VideoClip(np.stack(frames), caption=caption)
