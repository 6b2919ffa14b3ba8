"""Morton (Z-order) codes for 3D voxel coordinates.

Bit ``i`` of x lands on code bit ``3i``, y on ``3i + 1`` and z on ``3i + 2``.
Up to 21 bits per axis fit in a 63-bit code.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

MAX_BITS = 21


class MortonKey(NamedTuple):
    code: int
    level: int


def _check(v: int, max_depth: int) -> int:
    v = int(v)
    if not 0 <= v < (1 << max_depth):
        raise ValueError(f"coordinate {v} outside [0, 2^{max_depth})")
    return v


def morton_encode(x: int, y: int, z: int, max_depth: int = MAX_BITS) -> int:
    x, y, z = (_check(v, max_depth) for v in (x, y, z))
    code = 0
    for i in range(max_depth):
        code |= ((x >> i) & 1) << (3 * i)
        code |= ((y >> i) & 1) << (3 * i + 1)
        code |= ((z >> i) & 1) << (3 * i + 2)
    return code


def morton_decode(code: int) -> tuple[int, int, int]:
    x = y = z = 0
    for i in range(MAX_BITS):
        x |= ((code >> (3 * i)) & 1) << i
        y |= ((code >> (3 * i + 1)) & 1) << i
        z |= ((code >> (3 * i + 2)) & 1) << i
    return x, y, z


def _spread(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _compact(v: np.ndarray) -> np.ndarray:
    v = v & np.uint64(0x1249249249249249)
    v = (v ^ (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v ^ (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v ^ (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v ^ (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v ^ (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


def encode_array(coords: np.ndarray) -> np.ndarray:
    """Vectorised encode of an (N, 3) integer array; returns int64 codes."""
    coords = np.asarray(coords)
    code = _spread(coords[..., 0]) | (_spread(coords[..., 1]) << np.uint64(1)) | (
        _spread(coords[..., 2]) << np.uint64(2))
    return code.astype(np.int64)


def decode_array(codes: np.ndarray) -> np.ndarray:
    c = np.asarray(codes).astype(np.uint64)
    out = np.empty(c.shape + (3,), dtype=np.int64)
    out[..., 0] = _compact(c)
    out[..., 1] = _compact(c >> np.uint64(1))
    out[..., 2] = _compact(c >> np.uint64(2))
    return out
