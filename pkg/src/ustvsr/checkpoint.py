"""Binary named-tensor checkpoints.

Layout (little-endian)::

    b"USTV"  u32 version(=1)  u32 count
    count x { u32 name_len, name (utf-8), u8 dtype (0=f32, 1=f64), u8 ndim,
              u32 dims[ndim], raw values (row-major) }
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"USTV"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode_tensors(tensors) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
        if arr.dtype == np.float64:
            code = 1
        elif arr.dtype == np.float32:
            code = 0
        else:
            raise FormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode_tensors(raw: bytes, source="<bytes>") -> dict:
    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise OSError(f"{source}: truncated checkpoint")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    if take(4) != MAGIC:
        raise FormatError(f"{source}: bad magic, not a checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise FormatError(f"{source}: tensor {name!r} has unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(dims)
        out[name] = torch.from_numpy(arr.astype(dt.newbyteorder("=")))
    if pos != len(raw):
        raise FormatError(f"{source}: trailing bytes after last tensor")
    return out


def save_tensors(path, tensors) -> None:
    Path(path).write_bytes(encode_tensors(tensors))


def load_tensors(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_tensors(raw, str(path))


def _text_tensor(text: str) -> torch.Tensor:
    return torch.tensor(list(text.encode("utf-8")), dtype=torch.float32)


def _tensor_text(t: torch.Tensor) -> str:
    return bytes(int(v) for v in t.tolist()).decode("utf-8")


@dataclass
class Checkpoint:
    """Model parameters, Adam moments, step counter and the network config."""

    params: dict
    config_json: str
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.config_json.encode("utf-8")).hexdigest()

    def to_tensors(self) -> dict:
        out = dict(self.params)
        out.update({f"adam.m.{k}": v for k, v in self.exp_avg.items()})
        out.update({f"adam.v.{k}": v for k, v in self.exp_avg_sq.items()})
        out["meta.step"] = torch.tensor([float(self.step)], dtype=torch.float64)
        out["meta.config"] = _text_tensor(self.config_json)
        out["meta.config_hash"] = _text_tensor(self.config_hash)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict, source="<checkpoint>") -> "Checkpoint":
        try:
            config_json = _tensor_text(tensors["meta.config"])
            step = int(tensors["meta.step"][0])
        except KeyError as exc:
            raise FormatError(f"{source}: missing {exc.args[0]}") from exc
        ckpt = cls({}, config_json, step)
        for name, value in tensors.items():
            if name.startswith("adam.m."):
                ckpt.exp_avg[name[7:]] = value
            elif name.startswith("adam.v."):
                ckpt.exp_avg_sq[name[7:]] = value
            elif not name.startswith("meta."):
                ckpt.params[name] = value
        stored = tensors.get("meta.config_hash")
        if stored is not None and _tensor_text(stored) != ckpt.config_hash:
            raise FormatError(f"{source}: config hash mismatch")
        return ckpt

    def save(self, path) -> None:
        save_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_tensors(load_tensors(path), str(path))
