"""Dense float images, resampling and binary file formats.

Images are numpy arrays of shape ``(H, W, C)`` with ``C`` in {1, 3} and
values in [0, 1]. They are kept in float64 in memory (gradient checks need
the precision) and stored as float32 or 8-bit on disk.

File formats
------------
PPM   ``P6\\n<w> <h>\\n255\\n`` followed by ``w*h*3`` bytes, quantized with
      round-half-up ``floor(v*255 + 0.5)``.
PFM   grayscale ``Pf\\n<w> <h>\\n-1.0\\n`` followed by little-endian float32
      rows, bottom row first.
AVST  tensor container, little-endian::

          b"AVST" | u32 version=1 | u32 count
          per tensor: u32 name_len | utf-8 name | u32 rank | u32 dims[rank]
                      | float32 payload (row-major)
"""
from __future__ import annotations

import math
import os
import struct
from collections.abc import Iterable, Mapping

import numpy as np

MAGIC = b"AVST"
VERSION = 1


class FormatError(ValueError):
    """Malformed or unsupported file contents."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate the image invariants and return ``img`` unchanged."""
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {img.shape}")
    if img.size and not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image values outside [0, 1]")
    return img


def quantize(img: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def save_ppm(img: np.ndarray, path) -> None:
    check_image(img)
    if img.shape[2] != 3:
        raise ValueError("PPM needs a 3-channel image")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantize(img).tobytes())


def _read_header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated tokens; return them and the payload offset."""
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header", pos)
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after header", pos)
    return tokens, pos + 1


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    tokens, off = _read_header_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"bad magic {tokens[0]!r}", 0)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("non-integer header field", 2) from exc
    if w < 1 or h < 1 or maxval != 255:
        raise FormatError(f"unsupported dimensions/maxval {w}x{h}/{maxval}", 2)
    need = w * h * 3
    if len(buf) - off < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf) - off}", len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def save_pfm(img: np.ndarray, path) -> None:
    arr = np.asarray(img)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ValueError("PFM export is grayscale only")
        arr = arr[:, :, 0]
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    """Load a grayscale PFM as an ``(H, W, 1)`` float64 array."""
    with open(path, "rb") as f:
        buf = f.read()
    tokens, off = _read_header_tokens(buf, 4)
    if tokens[0] != b"Pf":
        raise FormatError(f"bad magic {tokens[0]!r}", 0)
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise FormatError("bad header field", 2) from exc
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * 4
    if len(buf) - off < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf) - off}", len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return data[::-1].astype(np.float64)[:, :, None]


def _pairs(tensors) -> list[tuple[str, np.ndarray]]:
    items = list(tensors.items()) if isinstance(tensors, Mapping) else list(tensors)
    seen = set()
    for name, _ in items:
        if not name:
            raise ValueError("tensor names must be non-empty")
        if name in seen:
            raise ValueError(f"duplicate tensor name {name!r}")
        seen.add(name)
    return items


def save_tensors(tensors: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]], path) -> None:
    """Write named float32 tensors to an AVST container.

    Accepts a mapping or a sequence of ``(name, array)`` pairs; the latter is
    checked for duplicate names.
    """
    items = _pairs(tensors)
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read an AVST container into an insertion-ordered dict of float32 arrays."""
    with open(path, "rb") as f:
        buf = f.read()

    def take(fmt: str, off: int):
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise FormatError("truncated container", off)
        return struct.unpack_from(fmt, buf, off), off + size

    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    (version, count), off = take("<II", 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,), off = take("<I", off)
        if off + nlen > len(buf):
            raise FormatError("truncated name", off)
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", off - nlen)
        (rank,), off = take("<I", off)
        dims, off = take(f"<{rank}I", off)
        numel = math.prod(dims)
        if off + 4 * numel > len(buf):
            raise FormatError(f"truncated payload for {name!r}", off)
        out[name] = np.frombuffer(buf, dtype="<f4", count=numel, offset=off).reshape(dims).copy()
        off += 4 * numel
    if off != len(buf):
        raise FormatError("trailing bytes after last tensor", off)
    return out


def container_size(tensors: Mapping[str, np.ndarray]) -> int:
    """Byte size of the AVST file that ``save_tensors`` would write."""
    total = 12
    for name, arr in tensors.items():
        total += 8 + len(name.encode("utf-8")) + 4 * np.ndim(arr) + 4 * np.size(arr)
    return total


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _resize_axis(img: np.ndarray, size: int, axis: int) -> np.ndarray:
    n = img.shape[axis]
    if n == size:
        return img
    # half-pixel centres: dst i samples src (i + 0.5) * n/size - 0.5
    x = (np.arange(size) + 0.5) * (n / size) - 0.5
    x = np.clip(x, 0.0, n - 1)
    lo = np.floor(x).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = x - lo
    shape = [1] * img.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    return np.take(img, lo, axis=axis) * (1.0 - frac) + np.take(img, hi, axis=axis) * frac


def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    out = _resize_axis(_resize_axis(img, height, 0), width, 1)
    return np.clip(out, 0.0, 1.0)


def resize_long_side(img: np.ndarray, target: int) -> np.ndarray:
    """Bilinearly resample so the longer side equals ``target`` pixels."""
    if target < 1:
        raise ValueError("target must be >= 1")
    h, w = img.shape[:2]
    if h >= w:
        nh, nw = target, max(1, _round_half_up(w * target / h))
    else:
        nh, nw = max(1, _round_half_up(h * target / w)), target
    if (nh, nw) == (h, w):
        return img
    return resize(img, nh, nw)


def center_crop(img: np.ndarray, side: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < side or w < side:
        raise ValueError(f"cannot crop {h}x{w} to {side}")
    top = (h - side) // 2
    left = (w - side) // 2
    return img[top:top + side, left:left + side]


def fit_square(img: np.ndarray, side: int) -> np.ndarray:
    """Resize so the short side is ``side`` and center-crop to ``side`` x ``side``."""
    h, w = img.shape[:2]
    if (h, w) == (side, side):
        return img
    target = max(side, _round_half_up(max(h, w) * side / min(h, w)))
    return center_crop(resize_long_side(img, target), side)


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.shape[2] != 3:
        raise ValueError("to_gray needs a 3-channel image")
    y = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    return np.clip(y, 0.0, 1.0)[..., None]
