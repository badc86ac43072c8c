"""Portable tensor files: a tiny self-describing float32 container.

Layout (little-endian)::

    b"PTF1" | u32 rank | u32 extent * rank | f32 payload (row-major)
"""
import struct

import numpy as np

MAGIC = b"PTF1"
_HEADER = struct.Struct("<4sI")


class PTFError(ValueError):
    """Malformed or truncated portable tensor file."""


def to_bytes(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype.kind not in "biuf":
        raise PTFError(f"cannot store dtype {arr.dtype}")
    arr = np.asarray(arr, dtype="<f4", order="C")
    header = _HEADER.pack(MAGIC, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def from_bytes(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise PTFError("file too short for a header")
    magic, rank = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise PTFError(f"bad magic {magic!r}")
    offset = _HEADER.size + 4 * rank
    if len(data) < offset:
        raise PTFError("truncated shape block")
    shape = struct.unpack_from(f"<{rank}I", data, _HEADER.size)
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if len(data) - offset != expected:
        raise PTFError(f"payload is {len(data) - offset} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(shape).copy()


def write(path, array):
    with open(path, "wb") as fh:
        fh.write(to_bytes(array))


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
