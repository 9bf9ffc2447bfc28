"""Checkpoint and video-container formats, key=value configs, run manifests.

Checkpoint layout (all integers little-endian)::

    b"SEIN" | u32 version | u32 len | config JSON (utf-8)
    repeated: u16 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | raw values

dtype 0 is float32 little-endian. Records run until end of file.

A video container is a directory holding ``manifest.json``, one binary PPM
per frame (``frame_0000.ppm`` ...), and ``frames.f32`` with the exact values.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .data import VideoClip

MAGIC = b"SEIN"
VERSION = 1
DTYPE_F32 = 0


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class ContainerError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, torch.Tensor | np.ndarray], config: dict) -> None:
    path = Path(path)
    text = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text]
    for name, value in tensors.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.ascontiguousarray(value, dtype="<f4")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def _take(buf: memoryview, pos: int, size: int, what: str):
    if pos + size > len(buf):
        raise TruncatedCheckpointError(f"truncated record while reading {what}")
    return buf[pos : pos + size], pos + size


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    data = memoryview(Path(path).read_bytes())
    if bytes(data[:4]) != MAGIC:
        raise BadMagicError(f"bad magic in {path}")
    head, pos = _take(data, 4, 8, "header")
    version, length = struct.unpack("<II", head)
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    text, pos = _take(data, pos, length, "config")
    config = json.loads(bytes(text).decode("utf-8"))
    tensors: dict[str, torch.Tensor] = {}
    while pos < len(data):
        raw, pos = _take(data, pos, 2, "name length")
        (name_len,) = struct.unpack("<H", raw)
        raw, pos = _take(data, pos, name_len, "name")
        name = bytes(raw).decode("utf-8")
        raw, pos = _take(data, pos, 2, f"{name} header")
        dtype, rank = struct.unpack("<BB", raw)
        if dtype != DTYPE_F32:
            raise CheckpointError(f"unsupported dtype code {dtype} for {name}")
        raw, pos = _take(data, pos, 4 * rank, f"{name} dims")
        dims = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(dims, dtype=np.int64))
        raw, pos = _take(data, pos, 4 * count, f"{name} values")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
        tensors[name] = torch.from_numpy(arr.copy())
    return tensors, config


def load_into(module: torch.nn.Module, tensors: dict[str, torch.Tensor], prefix: str = "") -> None:
    """Copy tensors into ``module``; the first absent or misshapen tensor is an error."""
    state = module.state_dict()
    for name, target in state.items():
        key = prefix + name
        if key not in tensors:
            raise ShapeMismatchError(f"checkpoint is missing tensor {key}")
        if tuple(tensors[key].shape) != tuple(target.shape):
            raise ShapeMismatchError(
                f"shape mismatch for {key}: checkpoint {tuple(tensors[key].shape)}, model {tuple(target.shape)}"
            )
    module.load_state_dict({name: tensors[prefix + name].to(state[name].dtype) for name in state})


# ---------------------------------------------------------------- containers


def _to_bytes(frame: np.ndarray) -> np.ndarray:
    return np.round((np.clip(frame, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def write_ppm(path, frame: np.ndarray) -> None:
    """Write a 3 x h x w frame in [-1, 1] as an 8-bit binary PPM."""
    _, h, w = frame.shape
    body = _to_bytes(frame).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + body)


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ContainerError(f"{path}: not an 8-bit binary PPM")
    w, h = int(fields[1]), int(fields[2])
    pix = np.frombuffer(data[pos + 1 : pos + 1 + 3 * w * h], dtype=np.uint8)
    if pix.size != 3 * w * h:
        raise ContainerError(f"{path}: truncated pixel data")
    return (pix.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / 127.5 - 1.0).astype(np.float32)


def write_video(path, clip: VideoClip, extra: dict | None = None) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    n, _, h, w = clip.frames.shape
    for i in range(n):
        write_ppm(root / f"frame_{i:04d}.ppm", clip.frames[i])
    clip.frames.astype("<f4").tofile(root / "frames.f32")
    manifest = {
        "frames": n,
        "height": h,
        "width": w,
        "channels": 3,
        "fps": clip.fps,
        "caption": clip.caption,
        "value_range": [-1.0, 1.0],
        "raw": "frames.f32",
    }
    if extra:
        manifest.update(extra)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_video(path, prefer_raw: bool = True) -> VideoClip:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError:
        raise ContainerError(f"{root}: no manifest.json") from None
    n, h, w = manifest["frames"], manifest["height"], manifest["width"]
    images = sorted(root.glob("frame_*.ppm"))
    if len(images) != n:
        raise ContainerError(f"{root}: manifest lists {n} frames but {len(images)} images present")
    raw = root / manifest.get("raw", "frames.f32")
    if prefer_raw and raw.exists():
        values = np.fromfile(raw, dtype="<f4")
        if values.size != n * 3 * h * w:
            raise ContainerError(f"{raw}: expected {n * 3 * h * w} values, found {values.size}")
        frames = values.reshape(n, 3, h, w).astype(np.float32)
    else:
        frames = np.stack([read_ppm(p) for p in images])
        if frames.shape[2:] != (h, w):
            raise ContainerError(f"{root}: frame images are {frames.shape[2:]}, manifest says {(h, w)}")
    return VideoClip(frames, fps=float(manifest.get("fps", 8.0)), caption=manifest.get("caption", ""))


def read_image(path) -> np.ndarray:
    """A single 3 x h x w frame from a PPM file or a one-frame container."""
    p = Path(path)
    if p.is_dir():
        return read_video(p).frames[0]
    return read_ppm(p)


# ---------------------------------------------------------------- configs


def parse_config_text(text: str, defaults: dict) -> dict:
    """Parse ``key = value`` lines against ``defaults``; unknown keys are errors.

    Values are coerced to the type of the default. ``#`` starts a comment.
    """
    out = dict(defaults)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _coerce(value, defaults[key], key)
    return out


def _coerce(value: str, default, key: str):
    if isinstance(default, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {value!r}") from None
    return value


def format_config_text(config: dict) -> str:
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in config.items())


# ---------------------------------------------------------------- run manifests


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tree_hashes(root) -> dict[str, str]:
    root = Path(root)
    if root.is_file():
        return {root.name: file_sha256(root)}
    return {
        str(p.relative_to(root)): file_sha256(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "run.json"
    }


def write_run_manifest(out_dir, command: str, argv: list[str], config: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "artifacts": tree_hashes(out),
    }
    path = out / "run.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
