"""Read and write the FTEN binary tensor format.

Layout: ``b"FTEN"``, version byte (1), dtype byte (1 = f32, 2 = f64), rank
byte, ``rank`` little-endian u64 dims, then the row-major little-endian
payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .._io import atomic_write

MAGIC = b"FTEN"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class FtenError(ValueError):
    pass


def dumps(array, dtype=None) -> bytes:
    arr = np.asarray(array)
    if dtype is not None:
        arr = arr.astype(dtype)
    elif arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    code = _CODES[np.dtype(arr.dtype).newbyteorder("=")]
    if arr.ndim > 255:
        raise FtenError("rank above 255 cannot be encoded")
    header = MAGIC + bytes([VERSION, code, arr.ndim])
    header += b"".join(struct.pack("<Q", d) for d in arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise FtenError("missing FTEN magic")
    version, code, rank = buf[4], buf[5], buf[6]
    if version != VERSION:
        raise FtenError(f"unsupported FTEN version {version}")
    if code not in _DTYPES:
        raise FtenError(f"unknown dtype code {code}")
    off = 7 + 8 * rank
    if len(buf) < off:
        raise FtenError("truncated FTEN header")
    dims = struct.unpack(f"<{rank}Q", buf[7:off])
    dt = _DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    if len(buf) - off != count * dt.itemsize:
        raise FtenError(f"payload size {len(buf) - off} does not match dims {list(dims)}")
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(dims).astype(dt.newbyteorder("="))


def save(path, array, dtype=None) -> None:
    atomic_write(path, dumps(array, dtype))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())
