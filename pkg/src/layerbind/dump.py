"""Binary tensor dump format.

Layout (little-endian)::

    b"LBND" | u16 version=1 | u8 dtype code (0 = float32) | u8 ndim |
    u32 dims[ndim] | float32 payload, row-major
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"LBND"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sHBB")


def encode(array):
    arr = np.array(array, dtype="<f4", order="C")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    head = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + arr.tobytes(order="C")


def decode(data):
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, dtype, ndim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")
    off = _HEADER.size
    if len(data) < off + 4 * ndim:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    if len(data) - off != expected:
        raise FormatError(f"payload is {len(data) - off} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=off).reshape(dims).copy()


def write_atomic(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path, array):
    write_atomic(path, encode(array))


def read_tensor(path):
    return decode(Path(path).read_bytes())
