"""Versioned named-tensor checkpoint container.

Layout (all integers little-endian)::

    magic  b"PSLUCKPT"
    u8     format version
    u32    config length, then UTF-8 JSON of the ModelConfig (plus extra metadata)
    u32    tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8  rank, u32 * rank dims
        float32 data, row-major
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np
import torch

from .model import JointEncoder, ModelConfig

MAGIC = b"PSLUCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: JointEncoder, meta: dict | None = None) -> None:
    header = {"model": model.cfg.to_dict(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    state = model.state_dict()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read(f, n):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def read_checkpoint(path) -> tuple[dict, "OrderedDict[str, torch.Tensor]"]:
    with open(path, "rb") as f:
        if _read(f, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<B", _read(f, 1))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", _read(f, 4))
        header = json.loads(_read(f, n).decode("utf-8"))
        (count,) = struct.unpack("<I", _read(f, 4))
        tensors = OrderedDict()
        for _ in range(count):
            (ln,) = struct.unpack("<H", _read(f, 2))
            name = _read(f, ln).decode("utf-8")
            (rank,) = struct.unpack("<B", _read(f, 1))
            dims = struct.unpack(f"<{rank}I", _read(f, 4 * rank)) if rank else ()
            size = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(_read(f, 4 * size), dtype="<f4").reshape(dims)
            tensors[name] = torch.from_numpy(arr.copy())
    return header, tensors


def load_checkpoint(path) -> tuple[JointEncoder, dict]:
    """Rebuild the model; every tensor's shape is validated against the stored config."""
    header, tensors = read_checkpoint(path)
    cfg = ModelConfig(**header["model"])
    model = JointEncoder(cfg)
    expected = model.state_dict()
    missing = set(expected) - set(tensors)
    extra = set(tensors) - set(expected)
    if missing or extra:
        raise CheckpointError(f"tensor names do not match config: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, t in tensors.items():
        if tuple(t.shape) != tuple(expected[name].shape):
            raise CheckpointError(f"{name}: shape {tuple(t.shape)} != expected {tuple(expected[name].shape)}")
    model.load_state_dict(tensors)
    return model, header.get("meta", {})
