"""Noise schedules, forward corruption and reverse samplers.

Every function here is array-library agnostic: latent grids may be numpy
arrays or torch tensors, schedule coefficients are plain python floats.

Forward process (closed form)::

    z_t = sqrt(abar_t) * z_0 + sqrt(1 - abar_t) * eps

with the boundary convention ``abar_0 = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# linear 5e-4..0.05 ramp with sqrt(abar) rescaled so abar_T = 1e-6: z_T is then
# indistinguishable from the N(0, I) draw the sampler starts from, while the
# mid-range keeps enough signal to train on
DEFAULT_T = 200
DEFAULT_BETA_START = 5e-4
DEFAULT_BETA_END = 0.05
DEFAULT_TERMINAL_ABAR = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances for t = 1..T (stored 0-indexed: ``beta[t - 1]``)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alphabar: np.ndarray

    def abar(self, t: int) -> float:
        """Cumulative product at step ``t``; ``abar(0) == 1``."""
        t = int(t)
        if t < 0 or t > self.T:
            raise ValueError(f"step {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alphabar[t - 1])

    def abar_array(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"steps outside [0, {self.T}]")
        table = np.concatenate([[1.0], self.alphabar])
        return table[t]


def build_schedule(T: int, beta_start: float, beta_end: float, terminal_abar: float = 0.0) -> NoiseSchedule:
    """Linear beta ramp from ``beta_start`` to ``beta_end`` inclusive.

    With ``terminal_abar > 0`` the ``sqrt(abar)`` curve is then mapped affinely
    so that ``abar_1`` is unchanged and ``abar_T == terminal_abar``; betas are
    re-derived from the ratios of consecutive ``abar``.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    T = int(T)
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphabar = np.cumprod(1.0 - beta)
    if terminal_abar:
        if T < 2 or not (0.0 < terminal_abar < alphabar[0]):
            raise ValueError(f"terminal_abar must lie in (0, abar_1) with T >= 2, got {terminal_abar}")
        s = np.sqrt(alphabar)
        lo = math.sqrt(terminal_abar)
        s = lo + (s - s[-1]) * (s[0] - lo) / (s[0] - s[-1])
        alphabar = s**2
        beta = 1.0 - alphabar / np.concatenate([[1.0], alphabar[:-1]])
    alpha = 1.0 - beta
    alphabar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alphabar=alphabar)


def default_schedule() -> NoiseSchedule:
    return build_schedule(DEFAULT_T, DEFAULT_BETA_START, DEFAULT_BETA_END, DEFAULT_TERMINAL_ABAR)


def _check_same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _lead_coeff(values: np.ndarray, like):
    """Reshape per-leading-axis coefficients so they broadcast against ``like``."""
    shape = (-1,) + (1,) * (like.ndim - 1)
    if isinstance(like, np.ndarray):
        return values.reshape(shape).astype(like.dtype)
    import torch

    return torch.as_tensor(values, dtype=like.dtype, device=like.device).reshape(shape)


def forward_corrupt(z0, t, eps, sched: NoiseSchedule):
    """Sample ``z_t`` from ``z_0`` given the noise draw ``eps``.

    ``t`` is a single step, or a 1-D array of steps indexed along the leading
    axis of ``z0`` (a batch of latent grids).
    """
    _check_same_shape(z0, eps, "forward_corrupt")
    if np.ndim(t) == 0:
        ab = sched.abar(int(t))
        return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps
    ab = sched.abar_array(t)
    if ab.shape[0] != z0.shape[0]:
        raise ValueError("one step per leading-axis entry required")
    return _lead_coeff(np.sqrt(ab), z0) * z0 + _lead_coeff(np.sqrt(1.0 - ab), z0) * eps


def training_loss(eps_true, eps_pred) -> float:
    """Mean squared error over every element (all frames, visible or not)."""
    _check_same_shape(eps_true, eps_pred, "training_loss")
    diff = eps_true - eps_pred
    return float((diff * diff).mean())


def predict_x0(z_t, eps_pred, t: int, sched: NoiseSchedule):
    ab = sched.abar(t)
    return (z_t - math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ab)


def ddim_step(z_t, eps_pred, t: int, t_prev: int, sched: NoiseSchedule, eta: float = 0.0, noise=None):
    """One DDIM update from step ``t`` down to ``t_prev``.

    With ``eta == 0`` the update is deterministic and ``noise`` is ignored.
    """
    _check_same_shape(z_t, eps_pred, "ddim_step")
    t, t_prev = int(t), int(t_prev)
    if not (0 <= t_prev < t <= sched.T):
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    ab_t, ab_prev = sched.abar(t), sched.abar(t_prev)
    x0 = predict_x0(z_t, eps_pred, t, sched)
    sigma = 0.0
    if eta > 0:
        sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)
    out = math.sqrt(ab_prev) * x0 + math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps_pred
    if sigma > 0:
        if noise is None:
            raise ValueError("eta > 0 requires a noise grid")
        _check_same_shape(z_t, noise, "ddim_step noise")
        out = out + sigma * noise
    return out


def ddim_invert_step(z, eps_pred, t: int, t_next: int, sched: NoiseSchedule):
    """Reverse of a deterministic DDIM step: move ``z`` from ``t`` up to ``t_next``."""
    _check_same_shape(z, eps_pred, "ddim_invert_step")
    t, t_next = int(t), int(t_next)
    if not (0 <= t < t_next <= sched.T):
        raise ValueError(f"need 0 <= t < t_next <= T, got t={t}, t_next={t_next}")
    x0 = predict_x0(z, eps_pred, t, sched)
    ab_next = sched.abar(t_next)
    return math.sqrt(ab_next) * x0 + math.sqrt(1.0 - ab_next) * eps_pred


def ddpm_step(z_t, eps_pred, t: int, sched: NoiseSchedule, noise):
    """Ancestral step ``t -> t-1``: posterior mean plus ``sqrt(beta_tilde) * noise``."""
    _check_same_shape(z_t, eps_pred, "ddpm_step")
    _check_same_shape(z_t, noise, "ddpm_step noise")
    t = int(t)
    if not (1 <= t <= sched.T):
        raise ValueError(f"step {t} outside [1, {sched.T}]")
    if t == 1 and bool((noise != 0).any()):
        raise ValueError("noise must be all zeros at t=1")
    beta = float(sched.beta[t - 1])
    alpha = float(sched.alpha[t - 1])
    ab_t, ab_prev = sched.abar(t), sched.abar(t - 1)
    mean = (z_t - (beta / math.sqrt(1.0 - ab_t)) * eps_pred) / math.sqrt(alpha)
    beta_tilde = (1.0 - ab_prev) / (1.0 - ab_t) * beta
    return mean + math.sqrt(beta_tilde) * noise


def ddim_timesteps(sched: NoiseSchedule, num_steps: int = 50) -> list[int]:
    """Ascending, unique, uniformly spaced steps over [1, T]."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    num_steps = min(int(num_steps), sched.T)
    if num_steps == 1:
        return [sched.T]
    ts = np.round(np.linspace(1, sched.T, num_steps)).astype(int)
    return sorted(set(int(x) for x in ts))
