"""Flat binary parameter checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes   b"SLGCKPT\\0"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON (run config, mode, ...)
    count      u32
    count x entry:
        name_len u16, name (UTF-8)
        label    u8   (0 = frozen, 1 = adapter)
        depth    u16  (stage depth used for learning-rate decay)
        ndim     u8, then ndim x u32 dims
    payload    row-major float64 values of every entry, in table order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Union

import numpy as np

MAGIC = b"SLGCKPT\0"
VERSION = 1
LABELS = ("frozen", "adapter")
_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    """The file is not a checkpoint this version can read."""


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    labels: Dict[str, str] = field(default_factory=dict)
    depths: Dict[str, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    head = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    head.append(struct.pack("<I", len(meta)) + meta)
    head.append(struct.pack("<I", len(ckpt.params)))
    payload = []
    for name, value in ckpt.params.items():
        arr = np.array(value, dtype=_F64, order="C")  # keeps 0-d shapes
        label = ckpt.labels.get(name, "frozen")
        if label not in LABELS:
            raise CheckpointError(f"bad partition label {label!r} for {name}")
        raw = name.encode("utf-8")
        head.append(struct.pack("<H", len(raw)) + raw)
        head.append(struct.pack("<BHB", LABELS.index(label), ckpt.depths.get(name, 0), arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(head))
        fh.write(b"".join(payload))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata") from exc
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        label, depth, ndim = r.unpack("<BHB")
        if label >= len(LABELS):
            raise CheckpointError(f"{path}: bad label code {label} for {name}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        table.append((name, LABELS[label], depth, tuple(shape)))
    ckpt = Checkpoint({}, meta=meta)
    for name, label, depth, shape in table:
        n = int(np.prod(shape, dtype=np.int64))
        ckpt.params[name] = np.frombuffer(r.take(n * 8), dtype=_F64).reshape(shape).astype(np.float64)
        ckpt.labels[name] = label
        ckpt.depths[name] = depth
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return ckpt


def load_into(module, ckpt: Checkpoint, strict: bool = True) -> None:
    """Copy checkpoint values into a module's parameters (shapes must agree)."""
    params = module.param_dict()
    missing = sorted(set(params) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(params))
    if strict and (missing or extra):
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        if name not in ckpt.params:
            continue
        value = ckpt.params[name]
        if value.shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
        p.data = value.astype(p.data.dtype, copy=True)
