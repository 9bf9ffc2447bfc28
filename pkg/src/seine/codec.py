"""Pixel <-> latent codecs.

``IdentityCodec`` is the default: at 16x16 there is nothing worth
compressing and diffusion behaviour stays visible in pixel space.
``LearnedCodec`` is a small per-frame convolutional autoencoder.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .data import VideoClip


class IdentityCodec:
    kind = "identity"
    channels = 3
    factor = 1

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ValueError(f"expected n x 3 x h x w frames, got {frames.shape}")
        return frames.copy()

    def decode_frames(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        if z.ndim != 4 or z.shape[1] != self.channels:
            raise ValueError(f"expected n x {self.channels} x h x w latent, got {z.shape}")
        return np.clip(z, -1.0, 1.0)

    def latent_shape(self, n: int, h: int, w: int) -> tuple[int, int, int, int]:
        return n, self.channels, h // self.factor, w // self.factor

    def encode(self, clip: VideoClip) -> np.ndarray:
        return self.encode_frames(clip.frames)

    def decode(self, z: np.ndarray, fps: float = 8.0, caption: str = "") -> VideoClip:
        return VideoClip(self.decode_frames(z), fps=fps, caption=caption)


class _AutoEncoder(nn.Module):
    def __init__(self, channels: int, factor: int, hidden: int):
        super().__init__()
        levels = int(round(math.log2(factor)))
        enc: list[nn.Module] = [nn.Conv2d(3, hidden, 3, padding=1), nn.SiLU()]
        for _ in range(levels):
            enc += [nn.Conv2d(hidden, hidden, 4, stride=2, padding=1), nn.SiLU()]
        enc += [nn.Conv2d(hidden, channels, 3, padding=1), nn.Tanh()]
        dec: list[nn.Module] = [nn.Conv2d(channels, hidden, 3, padding=1), nn.SiLU()]
        for _ in range(levels):
            dec += [nn.ConvTranspose2d(hidden, hidden, 4, stride=2, padding=1), nn.SiLU()]
        dec += [nn.Conv2d(hidden, 3, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)
        self.decoder = nn.Sequential(*dec)


class LearnedCodec(IdentityCodec):
    """Convolutional autoencoder; spatial downscale ``factor`` must be a power of two."""

    kind = "learned"

    def __init__(self, channels: int = 4, factor: int = 2, hidden: int = 32, seed: int = 0):
        if factor < 1 or factor & (factor - 1):
            raise ValueError("factor must be a power of two")
        self.channels = channels
        self.factor = factor
        self.hidden = hidden
        gen = torch.random.fork_rng(devices=[])
        with gen:
            torch.manual_seed(seed)
            self.net = _AutoEncoder(channels, factor, hidden)
        self.net.eval()

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ValueError(f"expected n x 3 x h x w frames, got {frames.shape}")
        h, w = frames.shape[2:]
        if h % self.factor or w % self.factor:
            raise ValueError(f"resolution {h}x{w} not divisible by factor {self.factor}")
        with torch.no_grad():
            return self.net.encoder(torch.from_numpy(frames)).numpy()

    def decode_frames(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        if z.ndim != 4 or z.shape[1] != self.channels:
            raise ValueError(f"expected n x {self.channels} x h x w latent, got {z.shape}")
        with torch.no_grad():
            out = self.net.decoder(torch.from_numpy(z)).numpy()
        return np.clip(out, -1.0, 1.0)

    def state_dict(self) -> dict[str, torch.Tensor]:
        return self.net.state_dict()

    def load_state_dict(self, state) -> None:
        self.net.load_state_dict(state)

    def config(self) -> dict:
        return {"codec": "learned", "codec_channels": self.channels, "codec_factor": self.factor, "codec_hidden": self.hidden}


def train_codec(
    clips: list[VideoClip],
    channels: int = 4,
    factor: int = 2,
    hidden: int = 32,
    steps: int = 2000,
    lr: float = 2e-3,
    batch_frames: int = 32,
    seed: int = 0,
) -> LearnedCodec:
    """Fit a :class:`LearnedCodec` to the frames of ``clips`` with an L1 loss."""
    codec = LearnedCodec(channels, factor, hidden, seed=seed)
    frames = torch.from_numpy(np.concatenate([c.frames for c in clips]))
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(codec.net.parameters(), lr=lr)
    codec.net.train()
    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(0, len(frames), size=min(batch_frames, len(frames))))
        x = frames[idx]
        loss = (codec.net.decoder(codec.net.encoder(x)) - x).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    codec.net.eval()
    return codec


def reconstruction_mae(codec, clip: VideoClip) -> float:
    return float(np.abs(codec.decode_frames(codec.encode_frames(clip.frames)) - clip.frames).mean())


def make_codec(kind: str = "identity", **kwargs):
    if kind == "identity":
        return IdentityCodec()
    if kind == "learned":
        return LearnedCodec(**kwargs)
    raise ValueError(f"unknown codec kind {kind!r}")
