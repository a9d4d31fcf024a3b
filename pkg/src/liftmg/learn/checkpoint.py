"""Versioned little-endian binary checkpoints.

Layout::

    magic  b"LMGCKPT1"
    u32    format version
    u32    metadata length, then that many bytes of UTF-8 JSON
    u32    array count
    per array:
        u16 name length, name (UTF-8)
        u8  dtype code, u8 ndim, ndim x u32 shape
        raw little-endian data
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LMGCKPT1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("<u1")}
_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def _code(a: np.ndarray) -> int:
    key = a.dtype.newbyteorder("=")
    if key not in _CODES:
        raise CheckpointError(f"unsupported dtype {a.dtype}")
    return _CODES[key]


def dumps(arrays: dict, meta: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    m = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<II", VERSION, len(m)))
    buf.write(m)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        code = _code(a)
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", code, a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict, dict]:
    """Parse a checkpoint blob into ``(arrays, meta)``."""
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    off = len(MAGIC)
    try:
        version, mlen = struct.unpack_from("<II", data, off)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off += 8
        meta = json.loads(data[off:off + mlen].decode())
        off += mlen
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode()
            off += nlen
            code, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            dt = _DTYPES[code]
            n = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(data, dtype=dt, count=n, offset=off).reshape(shape).astype(dt.newbyteorder("="))
            off += n * dt.itemsize
    except CheckpointError:
        raise
    except (struct.error, KeyError, ValueError) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from e
    if off != len(data):
        raise CheckpointError("trailing bytes after last array")
    return arrays, meta


def save(path, arrays: dict, meta: dict):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(arrays, meta))
    tmp.replace(path)


def load(path) -> tuple[dict, dict]:
    return loads(Path(path).read_bytes())
