"""Gradient computation and the masked-conditioning training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .codec import IdentityCodec
from .data import VideoClip
from .denoiser import Denoiser, DenoiserConfig, build_denoiser
from .diffusion import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_T,
    DEFAULT_TERMINAL_ABAR,
    NoiseSchedule,
    forward_corrupt,
)
from .masks import apply_mask, assemble_input, sample_mask
from .persistence import save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float, checkpoint: Path | None):
        super().__init__(f"non-finite loss {loss} at step {step}; last good checkpoint: {checkpoint}")
        self.step = step
        self.loss = loss
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    lr: float = 2e-4
    batch_size: int = 1
    steps: int = 1000
    mask_rate: float = 0.15
    masked_loss_only: bool = False
    require_visible: bool = False
    optimizer: str = "adam"
    lr_schedule: str = "constant"  # constant | cosine (anneal to 0 over ``steps``)
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    # schedule
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    terminal_abar: float = DEFAULT_TERMINAL_ABAR  # 0 keeps the plain linear ramp
    # data
    dataset_count: int = 8
    dataset_seed: int = 0
    frames: int = 16
    height: int = 16
    width: int = 16
    codec: str = "identity"
    codec_channels: int = 4
    codec_factor: int = 2
    codec_steps: int = 2000

    def __post_init__(self):
        for name in ("batch_size", "T", "dataset_count", "frames", "height", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.steps < 0 or self.checkpoint_every < 0:
            raise ValueError("lr must be positive; steps and checkpoint_every non-negative")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError("mask_rate must lie in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    inputs: torch.Tensor  # (B, n, 3c, h, w)
    t: torch.Tensor  # (B,)
    captions: list[str]
    eps: torch.Tensor  # (B, n, c, h, w)
    frame_weights: torch.Tensor | None = None  # (B, n); None = every frame


def batch_loss(model: Denoiser, batch: Batch) -> torch.Tensor:
    if len(batch.captions) == 0:
        raise ValueError("empty batch")
    text = torch.stack([model.embed_caption(c) for c in batch.captions])
    pred = model(batch.inputs, batch.t, text)
    sq = (pred - batch.eps) ** 2
    if batch.frame_weights is None:
        return sq.mean()
    w = batch.frame_weights.to(sq.dtype)[:, :, None, None, None].expand_as(sq)
    return (sq * w).sum() / w.sum().clamp_min(1.0)


def loss_and_gradients(model: Denoiser, batch: Batch) -> tuple[float, dict[str, torch.Tensor]]:
    """Batch-mean noise MSE and its gradient for every named parameter."""
    params = dict(model.named_parameters())
    loss = batch_loss(model, batch)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    return value, {
        name: (g if g is not None else torch.zeros_like(p)) for (name, p), g in zip(params.items(), grads)
    }


def make_batch(
    latents: np.ndarray,
    captions: list[str],
    sched: NoiseSchedule,
    rng: np.random.Generator,
    batch_size: int,
    mask_rate: float,
    masked_loss_only: bool = False,
    require_visible: bool = False,
) -> Batch:
    """Draw clips, steps, noise and masks; build the conditional inputs."""
    idx = rng.integers(0, len(latents), size=batch_size)
    t = rng.integers(1, sched.T + 1, size=batch_size)
    z0 = latents[idx]
    eps = rng.standard_normal(z0.shape).astype(np.float32)
    z_t = forward_corrupt(z0, t, eps, sched).astype(np.float32)
    inputs, weights = [], []
    for b in range(batch_size):
        mask = sample_mask(z0.shape[1], mask_rate, rng, require_visible=require_visible)
        inputs.append(assemble_input(z_t[b], mask, apply_mask(z0[b], mask)))
        weights.append(1 - mask)
    return Batch(
        inputs=torch.from_numpy(np.stack(inputs)),
        t=torch.from_numpy(t),
        captions=[captions[i] for i in idx],
        eps=torch.from_numpy(eps),
        frame_weights=torch.from_numpy(np.stack(weights)) if masked_loss_only else None,
    )


@dataclass
class TrainResult:
    model: Denoiser
    history: list[tuple[int, float]]
    checkpoint: Path | None = None


def format_history(history) -> str:
    return "".join(f"{step} {loss:.8g}\n" for step, loss in history)


def train(
    config: TrainConfig,
    dataset: list[VideoClip],
    codec=None,
    sched: NoiseSchedule | None = None,
    model: Denoiser | None = None,
    out_dir=None,
    extra_state=None,
    log_every: int = 500,
) -> TrainResult:
    """Fit the denoiser on ``dataset``.

    Each step draws clips, uniform steps in [1, T], Gaussian noise and
    Bernoulli frame masks, then takes one optimizer step on the noise MSE.
    With ``out_dir`` set, checkpoints land in ``out_dir/checkpoint.sein``
    every ``checkpoint_every`` steps and at the end, and the loss history in
    ``out_dir/loss.txt``. ``extra_state`` (a callable returning named tensors,
    e.g. codec weights) is stored alongside the network.
    """
    from .diffusion import build_schedule

    if not dataset:
        raise ValueError("dataset is empty")
    codec = codec or IdentityCodec()
    sched = sched or build_schedule(config.T, config.beta_start, config.beta_end, config.terminal_abar)
    if sched.T != config.T:
        raise ValueError("schedule length disagrees with config.T")
    if model is None:
        arch = DenoiserConfig(
            latent_channels=codec.channels, T=config.T, beta_start=config.beta_start, beta_end=config.beta_end,
            terminal_abar=config.terminal_abar,
        )
        model = build_denoiser(arch, seed=config.seed)
    if model.config.latent_channels != codec.channels:
        raise ValueError("denoiser latent channels disagree with codec")
    table = model.abar.numpy()[1:]
    if model.config.noise_skip and (table.shape != sched.alphabar.shape or not np.allclose(table, sched.alphabar, rtol=1e-12)):
        raise ValueError("denoiser noise schedule disagrees with the training schedule")
    latents = np.stack([codec.encode(clip) for clip in dataset]).astype(np.float32)
    captions = [clip.caption for clip in dataset]
    rng = np.random.default_rng(config.seed)
    if config.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=config.lr)
    decay = None
    if config.lr_schedule == "cosine" and config.steps > 0:
        decay = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.steps)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.sein" if out is not None else None
    last_good: Path | None = None
    history: list[tuple[int, float]] = []

    def checkpoint(step: int) -> None:
        nonlocal last_good
        if ckpt_path is None:
            return
        tensors = {f"denoiser.{k}": v for k, v in model.state_dict().items()}
        if extra_state is not None:
            tensors.update(extra_state())
        save_checkpoint(ckpt_path, tensors, checkpoint_config(model.config, config, step))
        last_good = ckpt_path

    model.train()
    for step in range(1, config.steps + 1):
        batch = make_batch(
            latents, captions, sched, rng, config.batch_size, config.mask_rate,
            config.masked_loss_only, config.require_visible,
        )
        try:
            loss, grads = loss_and_gradients(model, batch)
        except FloatingPointError:
            raise TrainingDiverged(step, float("nan"), last_good) from None
        for name, p in model.named_parameters():
            p.grad = grads[name]
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        if decay is not None:
            decay.step()
        history.append((step, loss))
        if log_every and step % log_every == 0:
            recent = np.mean([l for _, l in history[-log_every:]])
            log.info("step %d loss %.5f (mean of last %d)", step, recent, log_every)
        if config.checkpoint_every and step % config.checkpoint_every == 0:
            checkpoint(step)
    model.eval()
    checkpoint(config.steps)
    if out is not None:
        (out / "loss.txt").write_text(format_history(history))
    return TrainResult(model=model, history=history, checkpoint=last_good)


def checkpoint_config(arch: DenoiserConfig, config: TrainConfig, step: int) -> dict:
    return {"architecture": arch.to_dict(), "train": config.to_dict(), "step": step}


def smoothed(history, window: int = 200) -> float:
    """Mean loss over the last ``window`` steps."""
    if not history:
        raise ValueError("empty history")
    return float(np.mean([l for _, l in history[-window:]]))
