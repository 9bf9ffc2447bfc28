"""Per-frame visibility masks and the conditional input they produce.

A mask bit of 1 marks a visible (clean, conditioning) frame; 0 marks a frame
to be generated. The network input stacks three channel blocks per frame:
the noised latent, the mask broadcast to a full latent-shaped slab, and the
masked clean latent.
"""
from __future__ import annotations

import numpy as np

DEFAULT_MASK_RATE = 0.15


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError("a frame mask is a 1-D vector")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("frame mask entries must be 0 or 1")
    return arr.astype(np.uint8)


def sample_mask(n: int, p: float, rng: np.random.Generator, require_visible: bool = False) -> np.ndarray:
    """Draw ``n`` independent Bernoulli(p) bits.

    All-zero masks are kept (they act as unconditional samples) unless
    ``require_visible`` is set, in which case draws repeat until one bit is set.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if require_visible and p == 0.0:
        raise ValueError("cannot require a visible frame with p = 0")
    while True:
        bits = (rng.random(n) < p).astype(np.uint8)
        if not require_visible or bits.any():
            return bits


def _broadcast(bits: np.ndarray, like):
    shape = (len(bits),) + (1,) * (like.ndim - 1)
    if isinstance(like, np.ndarray):
        return bits.reshape(shape).astype(like.dtype)
    import torch

    return torch.as_tensor(bits, dtype=like.dtype, device=like.device).reshape(shape)


def apply_mask(z0, mask):
    """Zero every frame whose mask bit is 0; visible frames pass through unchanged."""
    bits = _as_bits(mask)
    if len(bits) != z0.shape[0]:
        raise ValueError(f"mask length {len(bits)} != frame count {z0.shape[0]}")
    if isinstance(z0, np.ndarray):
        out = np.zeros_like(z0)
        out[bits == 1] = z0[bits == 1]
        return out
    return z0 * _broadcast(bits, z0)


def _concat(parts, axis: int):
    if isinstance(parts[0], np.ndarray):
        return np.concatenate(parts, axis=axis)
    import torch

    return torch.cat(parts, dim=axis)


def assemble_input(z_t, mask, z0_masked):
    """Stack ``[z_t ; mask slab ; masked clean latent]`` along channels (n, 3c, h, w)."""
    bits = _as_bits(mask)
    if tuple(z_t.shape) != tuple(z0_masked.shape):
        raise ValueError(f"shape mismatch {tuple(z_t.shape)} vs {tuple(z0_masked.shape)}")
    if z_t.ndim != 4 or len(bits) != z_t.shape[0]:
        raise ValueError("expected an n x c x h x w grid and a length-n mask")
    hidden = bits == 0
    if hidden.any() and bool((z0_masked[np.flatnonzero(hidden)] != 0).any()):
        raise ValueError("masked clean latent is nonzero on a hidden frame")
    if isinstance(z_t, np.ndarray):
        slab = np.broadcast_to(_broadcast(bits, z_t), z_t.shape)
    else:
        slab = _broadcast(bits, z_t).expand(z_t.shape)
    return _concat([z_t, slab, z0_masked], axis=1)


def split_input(cond, c: int):
    """Inverse of :func:`assemble_input`: the three channel blocks."""
    return cond[:, :c], cond[:, c : 2 * c], cond[:, 2 * c : 3 * c]


def transition_mask(n: int) -> np.ndarray:
    """First and last frame visible."""
    if n < 3:
        raise ValueError("a transition needs at least 3 frames")
    bits = np.zeros(n, dtype=np.uint8)
    bits[0] = bits[-1] = 1
    return bits


def prediction_mask(n: int, k: int = 2) -> np.ndarray:
    """The first ``k`` frames (the carried-over overlap) visible."""
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    bits = np.zeros(n, dtype=np.uint8)
    bits[:k] = 1
    return bits


def animation_mask(n: int) -> np.ndarray:
    """Only the reference (first) frame visible."""
    if n < 2:
        raise ValueError("animation needs at least 2 frames")
    bits = np.zeros(n, dtype=np.uint8)
    bits[0] = 1
    return bits
