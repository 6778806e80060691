"""TNSR binary tensor files.

Layout (little-endian)::

    b"TNSR" | u16 version | u8 dtype (0 = f32, 1 = u8) | u8 ndim | u32 dims[ndim] | payload

The payload is the row-major array.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


class TnsrError(ValueError):
    pass


def encode(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    if a.dtype == np.bool_:
        a = a.astype(np.uint8)
    elif a.dtype.kind == "f":
        a = a.astype("<f4")
    code = _CODES.get(a.dtype)
    if code is None:
        raise TnsrError(f"unsupported dtype {a.dtype}")
    if a.ndim > 255:
        raise TnsrError("too many dimensions")
    head = MAGIC + struct.pack("<HBB", VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def decode(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:4] != MAGIC:
        raise TnsrError("not a TNSR file")
    version, code, ndim = struct.unpack_from("<HBB", data, 4)
    if version != VERSION:
        raise TnsrError(f"unsupported TNSR version {version}")
    if code not in _DTYPES:
        raise TnsrError(f"unknown dtype code {code}")
    off = 8 + 4 * ndim
    if len(data) < off:
        raise TnsrError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    dt = _DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(data) - off != n:
        raise TnsrError(f"payload has {len(data) - off} bytes, expected {n}")
    return np.frombuffer(data, dtype=dt, offset=off).reshape(dims).copy()


def save(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
