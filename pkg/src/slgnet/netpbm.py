"""Minimal PGM/PPM reader and writer (ASCII P2/P3 and binary P5/P6)."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

_CHANNELS = {b"P2": 1, b"P5": 1, b"P3": 3, b"P6": 3}


class NetpbmError(ValueError):
    pass


def _tokens(buf: bytes, start: int, count: int):
    """Read ``count`` whitespace-separated header fields, skipping # comments."""
    out, i = [], start
    while len(out) < count:
        if i >= len(buf):
            raise NetpbmError("truncated header")
        c = buf[i : i + 1]
        if c == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(buf) and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
                j += 1
            out.append(buf[i:j])
            i = j
    return out, i


def read_netpbm(path: Union[str, Path]) -> np.ndarray:
    """Image as float64 in [0, 1]; shape [H, W] for PGM and [3, H, W] for PPM."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in _CHANNELS:
        raise NetpbmError(f"{path}: unsupported netpbm magic {magic!r}")
    (w, h, maxval), pos = _tokens(buf, 2, 3)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise NetpbmError(f"{path}: bad header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise NetpbmError(f"{path}: bad header {w}x{h} maxval {maxval}")
    ch = _CHANNELS[magic]
    n = w * h * ch
    if magic in (b"P5", b"P6"):
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        data = buf[pos + 1 : pos + 1 + n * dtype.itemsize]
        if len(data) != n * dtype.itemsize:
            raise NetpbmError(f"{path}: truncated pixel data")
        arr = np.frombuffer(data, dtype=dtype)
    else:
        arr = np.array(buf[pos:].split()[:n], dtype=np.int64)
        if arr.size != n:
            raise NetpbmError(f"{path}: truncated pixel data")
    img = arr.astype(np.float64).reshape(h, w, ch) / maxval
    return img[..., 0] if ch == 1 else img.transpose(2, 0, 1)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Min-max normalize to 0..255; a constant image maps to 0."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi - lo <= 0:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.round((img - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path: Union[str, Path], img: np.ndarray, normalize: bool = True) -> None:
    """Binary 8-bit PGM. Without ``normalize`` values are taken as [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise NetpbmError(f"PGM needs a 2-D array, got {img.shape}")
    data = to_uint8(img) if normalize else np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def write_ppm(path: Union[str, Path], img: np.ndarray) -> None:
    """Binary 8-bit PPM from a [3, H, W] array in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise NetpbmError(f"PPM needs a [3, H, W] array, got {img.shape}")
    data = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    _, h, w = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + data.tobytes())
