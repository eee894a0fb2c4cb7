"""Flat binary container of named float64 tensors.

Layout (all integers little-endian)::

    magic      8 bytes   b"SPVPCKPT"
    version    u32       currently 1
    meta_len   u32       length of the UTF-8 JSON metadata block
    meta       bytes     JSON object (sorted keys), e.g. the model config
    count      u32       number of tensors
    per tensor:
        name_len u32, name (UTF-8)
        ndim     u32, dims u64 * ndim
        data     float64 * prod(dims), row-major

Tensors are written in sorted name order so identical parameters give
identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SPVPCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def state_tensors(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach() for k, v in module.state_dict().items()}


def dumps(tensors: dict[str, torch.Tensor | np.ndarray], meta: dict | None = None) -> bytes:
    meta_b = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_b)), meta_b, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        t = tensors[name]
        arr = np.array(t.cpu().numpy() if isinstance(t, torch.Tensor) else t, dtype="<f8", order="C")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    try:
        return _parse(data)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None


def _parse(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(data[off:off + meta_len].decode())
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode()
        off += n
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(dims)) if ndim else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(dims).copy()
        off += 8 * size
    if off != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return out, meta


def save(path, module_or_tensors, meta: dict | None = None) -> str:
    """Write a checkpoint and return its SHA-256 hex digest."""
    tensors = (state_tensors(module_or_tensors) if isinstance(module_or_tensors, torch.nn.Module)
               else module_or_tensors)
    blob = dumps(tensors, meta)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def load_into(module: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    own = module.state_dict()
    missing = set(own) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
    module.load_state_dict({k: torch.from_numpy(np.asarray(tensors[k])).to(own[k].dtype) for k in own})


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
