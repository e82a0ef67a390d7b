"""The ``OTSR`` single-tensor binary container.

Layout (all integers little-endian)::

    b"OTSR" 0x01 | dtype u8 (0=f32, 1=f64) | rank u8 | rank x u64 extents | payload

The payload is the raw row-major little-endian element buffer.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = b"OTSR\x01"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.dtype not in _DTYPE_CODES:
        raise FormatError(f"OTSR stores float32/float64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    code = _DTYPE_CODES[arr.dtype]
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes()


def decode(buf: bytes) -> Tensor:
    """Parse one OTSR blob. The blob must contain exactly one tensor."""
    if len(buf) < 7 or buf[:5] != MAGIC:
        raise FormatError("bad OTSR magic or version")
    code, rank = struct.unpack_from("<BB", buf, 5)
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown OTSR dtype code {code}")
    if rank == 0:
        raise FormatError("OTSR rank must be >= 1")
    head = 7 + 8 * rank
    if len(buf) < head:
        raise FormatError("truncated OTSR header")
    shape = struct.unpack_from(f"<{rank}Q", buf, 7)
    if 0 in shape:
        raise FormatError(f"OTSR extents must be >= 1, got {shape}")
    dtype = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if len(buf) != head + nbytes:
        raise FormatError(f"OTSR payload is {len(buf) - head} bytes, expected {nbytes}")
    arr = np.frombuffer(buf, dtype=dtype, count=int(np.prod(shape)), offset=head).reshape(shape)
    return Tensor(arr.astype(dtype.newbyteorder("="), copy=True))


def save(path, t: Tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(t))


def load(path) -> Tensor:
    with open(path, "rb") as fh:
        return decode(fh.read())
