"""Binary checkpoints.

Layout (all integers and floats little-endian)::

    b"SIMT"  u32 version
    u32 config_len, config_len bytes of UTF-8 JSON (ModelConfig fields)
    u32 tensor_count
    per tensor: u32 name_len, name (UTF-8), u32 rank, rank x u64 dims, f64 data
"""
from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from . import numerics as nm
from .config import ModelConfig, model_config_from_dict
from .formats import write_bytes
from .model import SimTrackModel, init_params

MAGIC = b"SIMT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(model: SimTrackModel) -> bytes:
    cfg = json.dumps(dataclasses.asdict(model.cfg), sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
           struct.pack("<I", len(model.params))]
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", t.data.ndim))
        out.append(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(out)


def save(model: SimTrackModel, path) -> None:
    write_bytes(path, encode(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(data: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a SIMT checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = model_config_from_dict(json.loads(r.take(r.u32()).decode("utf-8")))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after tensor table")
    return cfg, tensors


def shape_diff(cfg: ModelConfig, tensors: dict[str, np.ndarray]) -> list[str]:
    expected = {k: v.shape for k, v in init_params(cfg).items()}
    diff = []
    for k in sorted(set(expected) | set(tensors)):
        if k not in tensors:
            diff.append(f"missing {k} {expected[k]}")
        elif k not in expected:
            diff.append(f"unexpected {k} {tensors[k].shape}")
        elif expected[k] != tensors[k].shape:
            diff.append(f"{k}: checkpoint {tensors[k].shape} vs config {expected[k]}")
    return diff


def load(path, expect: ModelConfig | None = None) -> SimTrackModel:
    """Load a checkpoint; refuses configs or tensor shapes that do not match."""
    cfg, tensors = decode(Path(path).read_bytes())
    if expect is not None and expect != cfg:
        fields = [f.name for f in dataclasses.fields(ModelConfig)
                  if getattr(expect, f.name) != getattr(cfg, f.name)]
        diff = shape_diff(expect, tensors)
        raise CheckpointError(f"checkpoint config differs in {fields}" +
                              ("; shape diff:\n  " + "\n  ".join(diff) if diff else ""))
    diff = shape_diff(cfg, tensors)
    if diff:
        raise CheckpointError("tensor table does not match config:\n  " + "\n  ".join(diff))
    params = {k: nm.parameter(tensors[k], k) for k in init_params(cfg)}
    return SimTrackModel(cfg, params)
