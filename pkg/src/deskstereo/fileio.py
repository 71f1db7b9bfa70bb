"""PFM float maps and binary PPM images."""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import DataError, FormatError

_PFM_DIMS = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


def write_pfm(field: np.ndarray, path: str | os.PathLike) -> None:
    """Write a [1, H, W] (or [H, W]) float field as little-endian grayscale PFM."""
    arr = np.asarray(field)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise DataError(f"write_pfm: expected one channel, got shape {arr.shape}")
        arr = arr[0]
    if arr.ndim != 2:
        raise DataError(f"write_pfm: expected [1, H, W] or [H, W], got shape {arr.shape}")
    arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise DataError("write_pfm: field contains non-finite values")
    h, w = arr.shape
    header = b"Pf\n%d %d\n-1.0\n" % (w, h)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def _next_line(buf: bytes, pos: int) -> tuple[bytes, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise FormatError("PFM header line not terminated", pos)
    return buf[pos:end], end + 1


def parse_pfm(buf: bytes) -> np.ndarray:
    """Decode PFM bytes into a float32 [C, H, W] array (C = 1 for "Pf", 3 for "PF")."""
    magic, pos = _next_line(buf, 0)
    magic = magic.strip()
    if magic == b"Pf":
        channels = 1
    elif magic == b"PF":
        channels = 3
    else:
        raise FormatError(f"bad PFM magic {magic[:8]!r}", 0)
    dims_at = pos
    dims, pos = _next_line(buf, pos)
    m = _PFM_DIMS.match(dims)
    if not m:
        raise FormatError(f"bad PFM dimensions line {dims[:32]!r}", dims_at)
    w, h = int(m.group(1)), int(m.group(2))
    if w == 0 or h == 0:
        raise FormatError("PFM dimensions must be positive", dims_at)
    scale_at = pos
    scale_line, pos = _next_line(buf, pos)
    try:
        scale = float(scale_line.strip())
    except ValueError:
        raise FormatError(f"bad PFM scale {scale_line[:32]!r}", scale_at) from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError("PFM scale must be a non-zero finite number", scale_at)
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * channels * 4
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise FormatError(f"PFM payload truncated: need {need} bytes, have {len(payload)}", pos + len(payload))
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float32).reshape(h, w, channels)
    return np.ascontiguousarray(arr[::-1].transpose(2, 0, 1))


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pfm(fh.read())


def write_ppm(image: np.ndarray, path: str | os.PathLike) -> None:
    """Write a [3, H, W] image with values in [0, 1] as 8-bit binary PPM (P6)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"write_ppm: expected [3, H, W], got shape {arr.shape}")
    _, h, w = arr.shape
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit binary PPM (P6) into a float32 [3, H, W] array in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.find(b"\n", pos) + 1 or len(buf)
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("PPM header truncated", pos)
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6":
        raise FormatError(f"unsupported PPM magic {tokens[0][:8]!r}", 0)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("bad PPM header fields", 0) from None
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM supported, maxval={maxval}", pos)
    pos += 1
    need = w * h * 3
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise FormatError(f"PPM payload truncated: need {need} bytes, have {len(payload)}", pos + len(payload))
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return arr.astype(np.float32) / np.float32(255.0)
