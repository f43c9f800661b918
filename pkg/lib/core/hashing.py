"""
FNV-1a 64-bit hashing (H64) used by the hashing operators and sampling.

Scalar helpers work on Python ints; the *_array helpers hash whole numpy
columns at once. uint64 array arithmetic wraps modulo 2**64.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def id_bytes(value: int) -> bytes:
    """Eight little-endian bytes of a signed 64-bit id."""
    return struct.pack("<q", value)


def h64(value: int) -> int:
    return fnv1a64(id_bytes(value))


def h64_concat(values: Iterable[int]) -> int:
    return fnv1a64(b"".join(id_bytes(v) for v in values))


def to_int64(value: int) -> int:
    """Reinterpret an unsigned 64-bit hash as a signed int64."""
    value &= MASK64
    return value - (1 << 64) if value >= (1 << 63) else value


def _byte_matrix(columns) -> np.ndarray:
    """Stack int64 columns into an (n, 8 * len(columns)) little-endian byte matrix."""
    parts = [np.ascontiguousarray(c, dtype="<i8").view(np.uint8).reshape(-1, 8) for c in columns]
    return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]


def fnv1a64_rows(matrix: np.ndarray) -> np.ndarray:
    """Hash every row of a uint8 matrix; returns uint64."""
    h = np.full(matrix.shape[0], FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    for j in range(matrix.shape[1]):
        h ^= matrix[:, j].astype(np.uint64)
        h *= prime
    return h


def h64_array(ids: np.ndarray) -> np.ndarray:
    return fnv1a64_rows(_byte_matrix([np.asarray(ids, dtype=np.int64)]))


def h64_concat_array(*columns: np.ndarray) -> np.ndarray:
    """H64 over the concatenated bytes of aligned id columns (a‖b‖…)."""
    if len(columns[0]) == 0:
        return np.zeros(0, dtype=np.uint64)
    return fnv1a64_rows(_byte_matrix(columns))
