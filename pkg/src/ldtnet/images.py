"""Image and depth-map file I/O.

Supported: PNG (8/16-bit, grayscale or RGB) and binary PGM/PPM (P5/P6).
Decoded samples map to ``[0, 1]`` by ``v / (2**bits - 1)`` (for netpbm files,
``v / maxval``). Encoding quantizes with round-half-up, ``floor(v * max + 0.5)``,
so 0.5 at 8 bits is stored as 128. Loaded images are float32 tensors shaped
``(1, H, W, C)``.
"""
from __future__ import annotations

import io
import re
import zlib
from pathlib import Path

import numpy as np
import png

from .errors import ChannelCountError, CorruptStreamError, DataError, DomainError, UnsupportedFormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_PNM_HEADER = re.compile(rb"(P[56])(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def _normalize(values: np.ndarray, maxval: int) -> np.ndarray:
    return (values.astype(np.float64) / maxval).astype(np.float32)


def _decode_png(data: bytes) -> np.ndarray:
    try:
        reader = png.Reader(bytes=data)
        width, height, rows, info = reader.asDirect()
        rows = [np.asarray(r) for r in rows]
    except (png.Error, zlib.error, ValueError, EOFError) as exc:
        raise CorruptStreamError(f"corrupt PNG stream: {exc}") from exc
    if info.get("alpha"):
        raise ChannelCountError("PNG with an alpha channel is not supported")
    planes = info["planes"]
    if planes not in (1, 3):
        raise ChannelCountError(f"unexpected PNG channel count {planes}")
    bits = info["bitdepth"]
    if bits not in (8, 16):
        raise UnsupportedFormatError(f"PNG bit depth {bits} is not supported (8 or 16 only)")
    arr = np.vstack(rows).reshape(height, width, planes) if rows else np.zeros((0, width, planes))
    return _normalize(arr, 2 ** bits - 1)


def _decode_pnm(data: bytes) -> np.ndarray:
    m = _PNM_HEADER.match(data)
    if not m:
        raise CorruptStreamError("malformed PGM/PPM header")
    channels = 1 if m.group(1) == b"P5" else 3
    width, height, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if not 0 < maxval < 65536:
        raise CorruptStreamError(f"invalid netpbm maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    body = data[m.end():]
    if len(body) < count * dtype.itemsize:
        raise CorruptStreamError("truncated PGM/PPM raster")
    arr = np.frombuffer(body, dtype=dtype, count=count).reshape(height, width, channels)
    return _normalize(arr, maxval)


def load_image(path) -> np.ndarray:
    """Decode ``path`` into a float32 ``(1, H, W, C)`` tensor with values in [0, 1]."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"image not found: {path}") from exc
    if data.startswith(PNG_SIGNATURE):
        arr = _decode_png(data)
    elif data[:2] in (b"P5", b"P6"):
        arr = _decode_pnm(data)
    else:
        raise UnsupportedFormatError(f"{path}: not a PNG or binary PGM/PPM file")
    return arr[None]


def quantize(image, bit_depth: int) -> np.ndarray:
    """Round-half-up quantization to unsigned integers of ``bit_depth`` bits."""
    if bit_depth not in (8, 16):
        raise UnsupportedFormatError(f"bit depth {bit_depth} is not supported (8 or 16 only)")
    arr = np.asarray(image, dtype=np.float64)
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1):
        raise DomainError("image values must lie in [0, 1]; clamp before saving")
    maxval = 2 ** bit_depth - 1
    return np.floor(arr * maxval + 0.5).astype(np.uint16 if bit_depth == 16 else np.uint8)


def _as_hwc(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise DomainError(f"save_image needs batch extent 1, got {arr.shape[0]}")
        arr = arr[0]
    elif arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ChannelCountError(f"cannot save image shaped {np.asarray(image).shape}")
    return arr


def encode_image(image, bit_depth: int = 8, fmt: str = "png") -> bytes:
    arr = _as_hwc(image)
    q = quantize(arr, bit_depth)
    h, w, c = q.shape
    if fmt == "png":
        writer = png.Writer(w, h, greyscale=(c == 1), bitdepth=bit_depth, compression=6)
        buf = io.BytesIO()
        writer.write(buf, q.reshape(h, w * c))
        return buf.getvalue()
    if fmt in ("pgm", "ppm"):
        if (fmt == "pgm") != (c == 1):
            raise ChannelCountError(f"{fmt.upper()} cannot hold {c} channels")
        magic = b"P5" if c == 1 else b"P6"
        header = magic + b"\n%d %d\n%d\n" % (w, h, 2 ** bit_depth - 1)
        body = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
        return header + body
    raise UnsupportedFormatError(f"unsupported output format {fmt!r}")


def save_image(image, path, bit_depth: int = 8) -> None:
    """Write ``image`` (``(1,H,W,C)``, ``(H,W,C)`` or ``(H,W)``); format follows the suffix."""
    path = Path(path)
    fmt = path.suffix.lower().lstrip(".") or "png"
    path.write_bytes(encode_image(image, bit_depth, fmt))
