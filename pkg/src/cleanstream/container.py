"""Little-endian float32 tensor container for features and masks.

Layout: magic, version, 64-bit config hash, rank, dims, then raw float32
data. Meant for cross-implementation comparison dumps, nothing else.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagicError, MalformedHeaderError, TruncatedDataError

_MAGIC = b"CSF0"
_VERSION = 1
_MAX_RANK = 8


def write_tensor(path, values: np.ndarray, config_hash: int = 0) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim > _MAX_RANK:
        raise ValueError(f"rank {arr.ndim} exceeds container limit")
    header = struct.pack(f"<4sIQI{arr.ndim}I", _MAGIC, _VERSION,
                         config_hash & (2**64 - 1), arr.ndim, *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.tobytes())


def read_tensor(path) -> tuple:
    """Returns (values, config_hash)."""
    with open(path, "rb") as f:
        raw = f.read()
    base = struct.calcsize("<4sIQI")
    if len(raw) < base:
        raise TruncatedDataError("container header incomplete")
    magic, version, config_hash, rank = struct.unpack_from("<4sIQI", raw, 0)
    if magic != _MAGIC:
        raise BadMagicError("not a cleanstream tensor container")
    if version != _VERSION:
        raise MalformedHeaderError(f"unknown container version {version}")
    if rank > _MAX_RANK:
        raise MalformedHeaderError("implausible tensor rank")
    head = base + 4 * rank
    if len(raw) < head:
        raise TruncatedDataError("container dims incomplete")
    dims = struct.unpack_from(f"<{rank}I", raw, base)
    count = int(np.prod(dims)) if rank else 1
    if len(raw) < head + 4 * count:
        raise TruncatedDataError("container payload incomplete")
    values = np.frombuffer(raw, dtype="<f4", count=count,
                           offset=head).reshape(dims).copy()
    return values, config_hash
