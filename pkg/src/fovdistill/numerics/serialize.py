"""GDTN tensor blobs: b"GDTN", uint64 rank, uint64 dims, float64 values (little-endian)."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument

MAGIC = b"GDTN"


def tensor_to_bytes(arr) -> bytes:
    a = np.array(arr, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<Q", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + a.tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise InvalidArgument("not a GDTN blob (bad magic)")
    (rank,) = struct.unpack_from("<Q", buf, 4)
    off = 12 + 8 * rank
    if rank > 32 or len(buf) < off:
        raise InvalidArgument("truncated GDTN header")
    dims = struct.unpack_from(f"<{rank}Q", buf, 12)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) != off + 8 * count:
        raise InvalidArgument(f"GDTN payload size mismatch: expected {count} values")
    return np.frombuffer(buf, dtype="<f8", offset=off, count=count).reshape(dims).astype(np.float64)


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
