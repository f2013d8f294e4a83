"""Binary container for network weights and optimizer state.

Layout (all integers and floats little-endian)::

    magic       4s   b"LDTN"
    version     u16  FORMAT_VERSION
    file kind   u8   0 = weights, 1 = Adam state
    reserved    u8   0
    entries     u32  entry count
    entry*      u8 kind tag (1 conv, 2 batchnorm, 3 moment pair)
                u8 ndim, then ndim x u32 extents
                batchnorm entries only: f64 eps, f64 momentum
    [Adam only] u64 step count, f64 lr, beta1, beta2, eps, clip_norm (0 = off)
    payload len u64  byte length of the payload
    payload     float32 values, entries in declaration order
                  conv:      kernel (out*kh*kw*in), bias (out)
                  batchnorm: gamma, shift, running_mean, running_var
                  moment:    first moment, then second moment
    crc         u32  CRC32 of the payload bytes

Files are written to a temporary sibling and renamed into place, so an
interrupted write never replaces a good checkpoint with a partial one.
"""
from __future__ import annotations

import io
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptStreamError, FormatError

MAGIC = b"LDTN"
FORMAT_VERSION = 1
KIND_WEIGHTS = 0
KIND_ADAM = 1

TAG_CONV = 1
TAG_BN = 2
TAG_MOMENT = 3

_F32 = np.dtype("<f4")


@dataclass
class Entry:
    tag: int
    extents: tuple[int, ...]
    arrays: list[np.ndarray]
    scalars: tuple[float, ...] = ()


def _payload_lengths(entry: Entry) -> list[int]:
    n = int(np.prod(entry.extents)) if entry.extents else 1
    if entry.tag == TAG_CONV:
        return [n, entry.extents[0]]
    if entry.tag == TAG_BN:
        return [n] * 4
    if entry.tag == TAG_MOMENT:
        return [n, n]
    raise FormatError(f"unknown entry kind tag {entry.tag}")


def encode(file_kind: int, entries: list[Entry], meta: bytes = b"") -> bytes:
    head = io.BytesIO()
    head.write(MAGIC)
    head.write(struct.pack("<HBBI", FORMAT_VERSION, file_kind, 0, len(entries)))
    payload = io.BytesIO()
    for e in entries:
        head.write(struct.pack("<BB", e.tag, len(e.extents)))
        head.write(struct.pack(f"<{len(e.extents)}I", *e.extents))
        if e.tag == TAG_BN:
            head.write(struct.pack("<dd", *e.scalars))
        for arr, n in zip(e.arrays, _payload_lengths(e)):
            flat = np.ascontiguousarray(arr, dtype=_F32).reshape(-1)
            if flat.size != n:
                raise FormatError(f"entry array has {flat.size} values, expected {n}")
            payload.write(flat.tobytes())
    head.write(meta)
    body = payload.getvalue()
    head.write(struct.pack("<Q", len(body)))
    return head.getvalue() + body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CorruptStreamError(f"truncated file at byte {self.pos}")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals


def decode(data: bytes, expect_kind: int | None = None, meta_fmt: str = ""):
    """Parse a container; returns ``(file_kind, entries, meta_tuple)``.

    Structural problems raise :class:`FormatError`; truncation and checksum
    failures raise :class:`CorruptStreamError`.
    """
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("bad magic: not an LDTN checkpoint")
    r = _Reader(data)
    r.pos = 4
    version, kind, reserved, count = r.take("<HBBI")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    if kind not in (KIND_WEIGHTS, KIND_ADAM) or reserved != 0:
        raise FormatError(f"unknown file kind {kind}")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"file kind {kind} where {expect_kind} was expected")
    if count > 4096:
        raise FormatError(f"implausible entry count {count}")
    heads = []
    for _ in range(count):
        tag, ndim = r.take("<BB")
        if tag not in (TAG_CONV, TAG_BN, TAG_MOMENT) or ndim > 8:
            raise FormatError(f"bad entry header (tag {tag}, ndim {ndim})")
        extents = r.take(f"<{ndim}I")
        scalars = r.take("<dd") if tag == TAG_BN else ()
        heads.append((tag, tuple(extents), scalars))
    meta = r.take(meta_fmt) if meta_fmt else ()
    (plen,) = r.take("<Q")
    expected = sum(4 * n for t, ext, _ in heads for n in _payload_lengths(Entry(t, ext, [])))
    if plen != expected:
        raise FormatError(f"payload length {plen} inconsistent with shape table ({expected})")
    start = r.pos
    if start + plen + 4 != len(data):
        if start + plen + 4 > len(data):
            raise CorruptStreamError("truncated payload")
        raise CorruptStreamError("trailing bytes after checksum")
    body = data[start:start + plen]
    (crc,) = struct.unpack_from("<I", data, start + plen)
    if crc != zlib.crc32(body):
        raise CorruptStreamError("payload checksum mismatch")
    values = np.frombuffer(body, dtype=_F32)
    entries, off = [], 0
    for tag, extents, scalars in heads:
        arrays = []
        for i, n in enumerate(_payload_lengths(Entry(tag, extents, []))):
            shape = extents if (tag != TAG_CONV or i == 0) else (extents[0],)
            arrays.append(values[off:off + n].astype(np.float32).reshape(shape))
            off += n
        entries.append(Entry(tag, extents, arrays, tuple(scalars)))
    return kind, entries, tuple(meta)


def write_atomic(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"checkpoint not found: {path}") from exc
