"""SPVT binary checkpoints.

Layout, all integers little-endian::

    b"SPVT" | version u32 | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8 | dims u32 x rank
                | dtype u8 (0 = f32, 1 = f64) | raw values
    CRC32 u32 of every preceding byte
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor
from .vit import ParamStore

MAGIC = b"SPVT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_TAGS = {"f32": 0, "f64": 1}


def dumps(params: ParamStore, dtype: str = "f64") -> bytes:
    if dtype not in DTYPE_TAGS:
        raise ValueError(f"dtype must be one of {sorted(DTYPE_TAGS)}, got {dtype!r}")
    tag = DTYPE_TAGS[dtype]
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, t in params.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or t.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<B{t.ndim}I", t.ndim, *t.shape))
        parts.append(struct.pack("<B", tag))
        parts.append(t.data.astype(DTYPES[tag], copy=False).tobytes(order="C"))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint is truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(raw: bytes) -> ParamStore:
    if len(raw) < len(MAGIC) + 12:
        raise FormatError("checkpoint is too short")
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("CRC32 mismatch; checkpoint is corrupt")
    r = _Reader(body)
    r.take(4)
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        (tag,) = r.unpack("<B")
        if tag not in DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for tensor {name!r}")
        dtype = DTYPES[tag]
        count_values = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(r.take(count_values * dtype.itemsize), dtype=dtype)
        if name in params:
            raise FormatError(f"duplicate tensor name {name!r}")
        params[name] = Tensor(values.astype(np.float64).reshape(shape), requires_grad=True)
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} unexpected trailing bytes")
    return ParamStore(params)


def save_checkpoint(path, params: ParamStore, dtype: str = "f64") -> bytes:
    raw = dumps(params, dtype)
    Path(path).write_bytes(raw)
    return raw


def load_checkpoint(path) -> ParamStore:
    return loads(Path(path).read_bytes())


def content_hash(raw: bytes) -> str:
    """Git blob id of ``raw`` (SHA-1 over ``b"blob <len>\\0" + raw``)."""
    return hashlib.sha1(b"blob %d\0" % len(raw) + raw).hexdigest()
