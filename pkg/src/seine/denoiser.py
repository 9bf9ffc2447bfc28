"""Compact spatio-temporal epsilon-prediction network.

Two-level UNet over per-frame 2D residual blocks (widths 32 and 64), one
temporal self-attention layer across frames at each level. A per-frame
conditioning vector (sinusoidal timestep MLP + mean caption-token embedding +
frame-position embedding) modulates every residual block through scale/shift.

With ``noise_skip`` (the default) the convolutional trunk emits ``F`` and the
noise estimate is ``sqrt(1 - abar_t) * z_t - sqrt(abar_t) * F``. At large t the
estimate is then dominated by the exact input term, so the trunk never has to
copy ``z_t`` through the network with the precision that recovering the clean
latent from a near-pure-noise input would demand. The output head is
zero-initialised.

That skip passes the frame mean of ``z_t``, noise included, into the implied
clean estimate, and GroupNorm leaves the trunk nearly blind to a uniform
per-frame offset, so it cannot cancel it. With ``clean_mean`` the per-frame,
per-channel spatial mean of ``F`` is read as the mean of the clean latent
instead; only the zero-mean remainder goes through the skip.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .data import caption_words
from .diffusion import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, DEFAULT_TERMINAL_ABAR, build_schedule


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 3
    widths: tuple[int, int] = (32, 64)
    emb_dim: int = 128
    heads: int = 4
    groups: int = 8
    vocab: tuple[str, ...] = field(default_factory=lambda: tuple(caption_words()))
    noise_skip: bool = True
    clean_mean: bool = True
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    terminal_abar: float = DEFAULT_TERMINAL_ABAR

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["vocab"] = list(self.vocab)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        d["vocab"] = tuple(d["vocab"])
        return cls(**d)


def sinusoidal(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer-style features of a 1-D tensor of positions."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = x.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    """GroupNorm/SiLU/conv residual block with scale-shift conditioning."""

    def __init__(self, c_in: int, c_out: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        # x: (frames, C, H, W); emb: (frames, emb_dim)
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.emb(F.silu(emb))[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class TemporalAttention(nn.Module):
    """Self-attention across the frames of each video at every spatial site."""

    def __init__(self, channels: int, emb_dim: int, heads: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.pos = nn.Linear(emb_dim, channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x: torch.Tensor, pos_emb: torch.Tensor, n: int) -> torch.Tensor:
        # x: (B*n, C, H, W); pos_emb: (n, emb_dim)
        bn, c, hh, ww = x.shape
        b = bn // n
        h = self.norm(x).reshape(b, n, c, hh * ww).permute(0, 3, 1, 2).reshape(b * hh * ww, n, c)
        h = h + self.pos(pos_emb)[None]
        h, _ = self.attn(h, h, h, need_weights=False)
        h = h.reshape(b, hh * ww, n, c).permute(0, 2, 3, 1).reshape(bn, c, hh, ww)
        return x + h


class Denoiser(nn.Module):
    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        c, (w0, w1), e = config.latent_channels, config.widths, config.emb_dim
        g = config.groups
        self.token_index = {word: i + 1 for i, word in enumerate(config.vocab)}  # 0 = unknown
        self.tokens = nn.Embedding(len(config.vocab) + 1, e)
        self.time_mlp = nn.Sequential(nn.Linear(e, e), nn.SiLU(), nn.Linear(e, e))
        self.pos_mlp = nn.Linear(e, e)
        self.conv_in = nn.Conv2d(3 * c, w0, 3, padding=1)
        self.block0 = ResBlock(w0, w0, e, g)
        self.attn0 = TemporalAttention(w0, e, config.heads, g)
        self.down = nn.Conv2d(w0, w0, 3, stride=2, padding=1)
        self.block1 = ResBlock(w0, w1, e, g)
        self.attn1 = TemporalAttention(w1, e, config.heads, g)
        self.mid = ResBlock(w1, w1, e, g)
        self.up = nn.Conv2d(w1, w0, 3, padding=1)
        self.block_up = ResBlock(2 * w0, w0, e, g)
        self.norm_out = nn.GroupNorm(g, w0)
        self.conv_out = nn.Conv2d(w0, c, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)
        sched = build_schedule(config.T, config.beta_start, config.beta_end, config.terminal_abar)
        abar = torch.from_numpy(sched.abar_array(range(config.T + 1)))
        self.register_buffer("abar", abar, persistent=False)

    def token_ids(self, caption: str) -> list[int]:
        return [self.token_index.get(word, 0) for word in caption.lower().split()] or [0]

    def embed_caption(self, caption: str) -> torch.Tensor:
        """Mean of the caption's token embeddings, shape (emb_dim,)."""
        ids = torch.tensor(self.token_ids(caption), dtype=torch.long)
        return self.tokens(ids).mean(dim=0)

    def forward(self, x: torch.Tensor, t: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        """``x``: (B, n, 3c, h, w); ``t``: (B,) steps; ``text``: (B, emb_dim)."""
        b, n, _, hh, ww = x.shape
        dtype = x.dtype
        e = self.config.emb_dim
        temb = self.time_mlp(sinusoidal(t, e).to(dtype)) + text
        pos = self.pos_mlp(sinusoidal(torch.arange(n), e).to(dtype))
        emb = (temb[:, None, :] + pos[None, :, :]).reshape(b * n, e)
        h = self.conv_in(x.reshape(b * n, -1, hh, ww))
        h0 = self.attn0(self.block0(h, emb), pos, n)
        h1 = self.attn1(self.block1(self.down(h0), emb), pos, n)
        h1 = self.mid(h1, emb)
        u = self.up(F.interpolate(h1, size=(hh, ww), mode="nearest"))
        u = self.block_up(torch.cat([u, h0], dim=1), emb)
        out = self.conv_out(F.silu(self.norm_out(u))).reshape(b, n, -1, hh, ww)
        if not self.config.noise_skip:
            return out
        a = self.abar[t.long()].to(dtype)[:, None, None, None, None]
        z_t = x[:, :, : self.config.latent_channels]
        if not self.config.clean_mean:
            return torch.sqrt(1 - a) * z_t - torch.sqrt(a) * out
        z_mean = z_t.mean(dim=(-2, -1), keepdim=True)
        f_mean = out.mean(dim=(-2, -1), keepdim=True)
        x0 = torch.sqrt(a) * (z_t - z_mean) + torch.sqrt(1 - a) * (out - f_mean) + f_mean
        return (z_t - torch.sqrt(a) * x0) / torch.sqrt(1 - a)


def build_denoiser(config: DenoiserConfig = DenoiserConfig(), seed: int = 0) -> Denoiser:
    """Deterministic initialisation from ``seed`` without touching the global RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Denoiser(config)
    return model


def parameter_manifest(model: nn.Module) -> dict[str, tuple[int, ...]]:
    return {name: tuple(p.shape) for name, p in model.named_parameters()}


def predict_noise(model: Denoiser, cond_input, t, text) -> torch.Tensor:
    """Noise prediction for one conditional input of shape (n, 3c, h, w).

    ``text`` is a caption string or a precomputed caption embedding.
    """
    x = torch.as_tensor(cond_input)
    param = next(model.parameters())
    x = x.to(param.dtype)
    c = model.config.latent_channels
    if x.ndim != 4 or x.shape[1] != 3 * c:
        raise ValueError(f"expected n x {3 * c} x h x w input, got {tuple(x.shape)}")
    if isinstance(text, str):
        text = model.embed_caption(text)
    text = torch.as_tensor(text).to(param.dtype)
    if text.shape != (model.config.emb_dim,):
        raise ValueError(f"caption embedding must have shape ({model.config.emb_dim},)")
    return model(x[None], torch.tensor([int(t)]), text[None])[0]
