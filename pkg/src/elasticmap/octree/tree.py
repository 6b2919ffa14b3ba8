"""Sparse Morton-keyed octree whose finest leaves are 8x8x8 voxel blocks.

Nodes of one depth live in a sorted code array (Z-order) with parallel payload
arrays, so whole tree levels can be looked up and updated with vectorised
numpy calls. Block cell data lives in a slot-addressed :class:`BlockPool`.

An internal node is either a *uniform leaf* (one log-odds value covering its
whole cube, used for coarse free space) or has children. A missing node below
a non-leaf parent is unknown space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import _kernels as K
from .morton import MortonKey, decode_array, encode_array, morton_encode

BLOCK_SIDE = 8
BLOCK_SCALES = 4
CELLS_PER_BLOCK = K.CELLS_PER_BLOCK
TSDF = "tsdf"
OCCUPANCY = "occupancy"


class VoxelData(NamedTuple):
    value: float
    weight: float
    observed: bool
    all_observed: bool
    scale: int


class BlockPool:
    """Growable struct-of-arrays storage for voxel blocks."""

    def __init__(self, capacity: int = 64):
        self.value = np.zeros((capacity, CELLS_PER_BLOCK))
        self.weight = np.zeros((capacity, CELLS_PER_BLOCK), dtype=np.float32)
        self.obs_any = np.zeros((capacity, CELLS_PER_BLOCK), dtype=bool)
        self.obs_all = np.zeros((capacity, CELLS_PER_BLOCK), dtype=bool)
        self.scale = np.full(capacity, 3, dtype=np.int64)
        self.coord = np.zeros((capacity, 3), dtype=np.int64)
        self.frame = np.full(capacity, -1, dtype=np.int64)
        self.used = np.zeros(capacity, dtype=bool)
        self._free: list[int] = []
        self._top = 0

    @property
    def capacity(self) -> int:
        return self.scale.shape[0]

    @property
    def count(self) -> int:
        return self._top - len(self._free)

    @property
    def bytes_per_block(self) -> int:
        return CELLS_PER_BLOCK * (8 + 4 + 1 + 1) + 8 * 3 + 8 + 8 + 1

    def _grow(self, need: int):
        cap = self.capacity
        new = max(need, cap * 2)
        for name in ("value", "weight", "obs_any", "obs_all", "scale", "coord", "frame", "used"):
            old = getattr(self, name)
            arr = np.zeros((new,) + old.shape[1:], dtype=old.dtype)
            arr[:cap] = old
            setattr(self, name, arr)
        self.scale[cap:] = 3
        self.frame[cap:] = -1

    def alloc(self, coords: np.ndarray) -> np.ndarray:
        """Reserve one slot per block corner in ``coords`` (N, 3)."""
        n = len(coords)
        reuse = min(n, len(self._free))
        slots = np.empty(n, dtype=np.int64)
        for i in range(reuse):
            slots[i] = self._free.pop()
        fresh = n - reuse
        if self._top + fresh > self.capacity:
            self._grow(self._top + fresh)
        slots[reuse:] = np.arange(self._top, self._top + fresh)
        self._top += fresh
        self.value[slots] = 0.0
        self.weight[slots] = 0.0
        self.obs_any[slots] = False
        self.obs_all[slots] = False
        self.scale[slots] = 3
        self.frame[slots] = -1
        self.coord[slots] = coords
        self.used[slots] = True
        return slots

    def release(self, slots):
        for s in np.asarray(slots, dtype=np.int64):
            self.used[s] = False
            self._free.append(int(s))


class _Level:
    """Sorted node codes of one depth plus their payload."""

    FIELDS = ("codes", "value", "any_obs", "all_obs", "leaf", "child_mask", "slot")

    def __init__(self):
        self.codes = np.empty(0, dtype=np.int64)
        self.value = np.empty(0)
        self.any_obs = np.empty(0, dtype=bool)
        self.all_obs = np.empty(0, dtype=bool)
        self.leaf = np.empty(0, dtype=bool)
        self.child_mask = np.empty(0, dtype=np.uint8)
        self.slot = np.empty(0, dtype=np.int64)

    def __len__(self):
        return self.codes.size

    def find(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if self.codes.size == 0:
            return np.full(codes.shape, -1, dtype=np.int64)
        i = np.searchsorted(self.codes, codes)
        i = np.minimum(i, self.codes.size - 1)
        return np.where(self.codes[i] == codes, i, -1)

    def insert(self, codes, value=0.0, any_obs=False, all_obs=False, leaf=False,
               child_mask=0, slot=-1):
        codes = np.asarray(codes, dtype=np.int64)
        n = codes.size
        if n == 0:
            return
        new = dict(
            codes=codes,
            value=np.broadcast_to(np.asarray(value, dtype=float), (n,)),
            any_obs=np.broadcast_to(np.asarray(any_obs, dtype=bool), (n,)),
            all_obs=np.broadcast_to(np.asarray(all_obs, dtype=bool), (n,)),
            leaf=np.broadcast_to(np.asarray(leaf, dtype=bool), (n,)),
            child_mask=np.broadcast_to(np.asarray(child_mask, dtype=np.uint8), (n,)),
            slot=np.broadcast_to(np.asarray(slot, dtype=np.int64), (n,)),
        )
        merged = np.concatenate([self.codes, codes])
        order = np.argsort(merged, kind="stable")
        for name in self.FIELDS:
            arr = np.concatenate([getattr(self, name), new[name]])
            setattr(self, name, arr[order])

    def remove(self, idx):
        keep = np.ones(self.codes.size, dtype=bool)
        keep[idx] = False
        for name in self.FIELDS:
            setattr(self, name, getattr(self, name)[keep])

    def range(self, lo: int, hi: int) -> tuple[int, int]:
        """Index range of codes in ``[lo, hi)``."""
        return (int(np.searchsorted(self.codes, lo, "left")),
                int(np.searchsorted(self.codes, hi, "left")))


@dataclass
class VoxelBlock:
    """View of one allocated block; arrays alias the pool storage."""

    tree: "Octree"
    slot: int

    @property
    def base_coord(self) -> np.ndarray:
        return self.tree.pool.coord[self.slot].copy()

    @property
    def key(self) -> MortonKey:
        return MortonKey(int(encode_array(self.tree.pool.coord[self.slot])), self.tree.block_depth)

    @property
    def current_scale(self) -> int:
        return int(self.tree.pool.scale[self.slot])

    @property
    def last_integration_frame(self) -> int:
        return int(self.tree.pool.frame[self.slot])

    def _cells(self, arr, s):
        n = BLOCK_SIDE >> s
        o = int(K.OFFSETS[s])
        # (x, y, z) indexing
        return arr[self.slot, o:o + n ** 3].reshape(n, n, n).transpose(2, 1, 0)

    def values(self, scale: int | None = None) -> np.ndarray:
        return self._cells(self.tree.pool.value, self.current_scale if scale is None else scale)

    def weights(self, scale: int | None = None) -> np.ndarray:
        return self._cells(self.tree.pool.weight, self.current_scale if scale is None else scale)

    def observed(self, scale: int | None = None) -> np.ndarray:
        return self._cells(self.tree.pool.obs_any, self.current_scale if scale is None else scale)

    def all_observed(self, scale: int | None = None) -> np.ndarray:
        return self._cells(self.tree.pool.obs_all, self.current_scale if scale is None else scale)


class Octree:
    """Cubic sparse volume of ``2**max_depth`` voxels per side.

    ``origin`` is the map-frame position of the volume's minimum corner; by
    default the volume is centred on the tree frame origin.
    """

    def __init__(self, voxel_dim: float, size: float = 200.0, origin=None, kind: str = TSDF,
                 max_depth: int | None = None):
        if voxel_dim <= 0:
            raise ValueError("voxel_dim must be positive")
        if kind not in (TSDF, OCCUPANCY):
            raise ValueError(f"unknown octree kind {kind!r}")
        if max_depth is None:
            max_depth = max(3, math.ceil(math.log2(max(size, voxel_dim) / voxel_dim) - 1e-9))
        if not 3 <= max_depth <= 21:
            raise ValueError("max_depth must be in [3, 21]")
        self.voxel_dim = float(voxel_dim)
        self.max_depth = int(max_depth)
        self.kind = kind
        self.map_dim = self.voxel_dim * (1 << self.max_depth)
        if origin is None:
            origin = np.full(3, -self.map_dim / 2)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.block_depth = self.max_depth - 3
        self.levels = [_Level() for _ in range(self.block_depth + 1)]
        self.pool = BlockPool()

    # --- geometry -------------------------------------------------------

    @property
    def size_voxels(self) -> int:
        return 1 << self.max_depth

    def node_side(self, level: int) -> int:
        """Node side length in voxels."""
        return 1 << (self.max_depth - level)

    def level_scale(self, level: int) -> int:
        return self.max_depth - level

    def parent_codes(self, codes: np.ndarray, level: int) -> np.ndarray:
        shift = 3 * (self.max_depth - level + 1)
        return (np.asarray(codes, dtype=np.int64) >> shift) << shift

    def child_offsets(self, level: int) -> np.ndarray:
        """Code offsets of the 8 children of a node at ``level``."""
        return np.arange(8, dtype=np.int64) << (3 * (self.max_depth - level - 1))

    def octant(self, codes: np.ndarray, level: int) -> np.ndarray:
        return ((np.asarray(codes, dtype=np.int64) >> (3 * (self.max_depth - level))) & 7).astype(np.uint8)

    def node_centers(self, codes: np.ndarray, level: int) -> np.ndarray:
        side = self.node_side(level)
        return self.origin + (decode_array(codes) + side / 2.0) * self.voxel_dim

    def to_voxel(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.origin) / self.voxel_dim

    def in_bounds(self, points: np.ndarray) -> np.ndarray:
        v = self.to_voxel(points)
        return np.all((v >= 0) & (v < self.size_voxels), axis=-1)

    # --- structure ------------------------------------------------------

    @property
    def block_level(self) -> _Level:
        return self.levels[self.block_depth]

    def block_count(self) -> int:
        return self.pool.count

    def allocated_bytes(self) -> int:
        nodes = sum(len(l) for l in self.levels)
        return self.pool.count * self.pool.bytes_per_block + nodes * 28

    def _key_from_coords(self, x, y, z, level: int) -> int:
        side = self.node_side(level)
        return morton_encode(x - x % side, y - y % side, z - z % side, self.max_depth)

    def allocate_block(self, key: MortonKey | tuple) -> VoxelBlock:
        """Allocate the block for ``key`` (or integer voxel coords), with ancestors.

        Idempotent: an existing block is returned unchanged.
        """
        if isinstance(key, MortonKey):
            if key.level != self.block_depth:
                raise ValueError(f"key level {key.level} is not the block depth {self.block_depth}")
            if not 0 <= key.code < (1 << (3 * self.max_depth)):
                raise ValueError("key outside map bounds")
            code = key.code
        else:
            x, y, z = (int(v) for v in key)
            code = self._key_from_coords(x, y, z, self.block_depth)
        slots = self.ensure_blocks(np.array([code], dtype=np.int64))
        return VoxelBlock(self, int(slots[0]))

    def ensure_blocks(self, codes: np.ndarray) -> np.ndarray:
        """Slots of the blocks with the given codes, allocating as needed.

        Uniform-leaf ancestors are split on the way down so the new block
        inherits the leaf value.
        """
        requested = np.asarray(codes, dtype=np.int64)
        codes = np.unique(requested)
        if codes.size and (codes.min() < 0 or codes.max() >= (1 << (3 * self.max_depth))):
            raise ValueError("block code outside map bounds")
        BD = self.block_depth
        idx = self.block_level.find(codes)
        missing = codes[idx < 0]
        if missing.size:
            for level in range(BD):
                self._split_leaves_above(missing, level)
            idx = self.block_level.find(codes)
            missing = codes[idx < 0]
            self.block_level.insert(missing, leaf=False)
            self.ensure_ancestors(missing, BD)
            idx = self.block_level.find(codes)
        lv = self.block_level
        need = lv.slot[idx] < 0
        if need.any():
            self._materialise(idx[need])
        return lv.slot[lv.find(requested)]

    def _split_leaves_above(self, codes: np.ndarray, level: int):
        """Split uniform leaves at ``level`` that contain any of ``codes``."""
        lv = self.levels[level]
        shift = 3 * (self.max_depth - level)
        anc = np.unique((codes >> shift) << shift)
        idx = lv.find(anc)
        hit = idx[idx >= 0]
        hit = hit[lv.leaf[hit]]
        if hit.size:
            self.split(level, hit)

    def split(self, level: int, idx: np.ndarray):
        """Turn uniform leaves into parents of 8 uniform children."""
        lv = self.levels[level]
        idx = np.asarray(idx, dtype=np.int64)
        codes = lv.codes[idx]
        vals = lv.value[idx]
        lv.leaf[idx] = False
        lv.child_mask[idx] = 0xFF
        child = (codes[:, None] + self.child_offsets(level)[None, :]).ravel()
        cval = np.repeat(vals, 8)
        self.levels[level + 1].insert(child, value=cval, any_obs=True, all_obs=True, leaf=True)

    def _materialise(self, idx: np.ndarray):
        """Give block-depth nodes pool storage, copying uniform leaf values."""
        lv = self.block_level
        codes = lv.codes[idx]
        slots = self.pool.alloc(decode_array(codes))
        p = self.pool
        for i, s in zip(idx, slots):
            if lv.leaf[i]:
                K.fill_block(p.value, p.weight, p.obs_any, p.obs_all, p.scale, s, lv.value[i], 0.0, True)
        lv.slot[idx] = slots
        lv.leaf[idx] = False

    def ensure_ancestors(self, codes: np.ndarray, level: int):
        """Create missing ancestors of nodes at ``level`` and set child bits."""
        codes = np.asarray(codes, dtype=np.int64)
        for l in range(level, 0, -1):
            if codes.size == 0:
                return
            parent = self.parent_codes(codes, l)
            up = self.levels[l - 1]
            pu = np.unique(parent)
            pidx = up.find(pu)
            new = pu[pidx < 0]
            up.insert(new)
            pidx = up.find(parent)
            np.bitwise_or.at(up.child_mask, pidx, (1 << self.octant(codes, l).astype(np.int64)).astype(np.uint8))
            codes = new

    def remove_blocks(self, codes: np.ndarray):
        """Drop blocks (and ancestors left without children)."""
        codes = np.asarray(codes, dtype=np.int64)
        lv = self.block_level
        idx = lv.find(codes)
        idx = idx[idx >= 0]
        if idx.size == 0:
            return
        slots = lv.slot[idx]
        self.pool.release(slots[slots >= 0])
        codes = lv.codes[idx]
        lv.remove(idx)
        level = self.block_depth
        while level > 0 and codes.size:
            up = self.levels[level - 1]
            parent = self.parent_codes(codes, level)
            pidx = up.find(parent)
            bits = (1 << self.octant(codes, level).astype(np.int64)).astype(np.uint8)
            np.bitwise_and.at(up.child_mask, pidx, ~bits)
            pu = np.unique(pidx)
            empty = pu[(up.child_mask[pu] == 0) & ~up.leaf[pu]]
            codes = up.codes[empty]
            up.remove(empty)
            level -= 1

    def iterate_allocated(self) -> Iterator[tuple[MortonKey, VoxelBlock]]:
        """Yield ``(key, block)`` for every allocated block in Z-order."""
        lv = self.block_level
        for code, slot in zip(lv.codes.tolist(), lv.slot.tolist()):
            if slot >= 0:
                yield MortonKey(code, self.block_depth), VoxelBlock(self, slot)

    def allocated_slots(self) -> tuple[np.ndarray, np.ndarray]:
        lv = self.block_level
        m = lv.slot >= 0
        return lv.codes[m], lv.slot[m]

    def uniform_leaves(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        """``(level, codes, values)`` of the uniform leaves of every level."""
        for level, lv in enumerate(self.levels):
            m = lv.leaf
            if m.any():
                yield level, lv.codes[m], lv.value[m]

    def check_ancestor_closure(self) -> bool:
        for level in range(self.block_depth, 0, -1):
            codes = self.levels[level].codes
            if codes.size == 0:
                continue
            parent = self.parent_codes(codes, level)
            up = self.levels[level - 1]
            pidx = up.find(parent)
            if np.any(pidx < 0) or np.any(up.leaf[pidx]):
                return False
            bits = (1 << self.octant(codes, level).astype(np.int64))
            if np.any((up.child_mask[pidx].astype(np.int64) & bits) == 0):
                return False
        return True

    # --- summaries ------------------------------------------------------

    def sync_block_summaries(self, idx: np.ndarray | None = None):
        """Copy each block's scale-3 cell into the block-depth node payload."""
        lv = self.block_level
        if idx is None:
            idx = np.nonzero(lv.slot >= 0)[0]
        else:
            idx = np.asarray(idx, dtype=np.int64)
            idx = idx[lv.slot[idx] >= 0]
        s = lv.slot[idx]
        lv.value[idx] = self.pool.value[s, CELLS_PER_BLOCK - 1]
        lv.any_obs[idx] = self.pool.obs_any[s, CELLS_PER_BLOCK - 1]
        lv.all_obs[idx] = self.pool.obs_all[s, CELLS_PER_BLOCK - 1]

    def recompute_nodes(self, level: int, idx: np.ndarray):
        """Max / observed summaries of non-leaf nodes at ``level`` from children."""
        lv = self.levels[level]
        idx = np.asarray(idx, dtype=np.int64)
        idx = idx[~lv.leaf[idx]]
        if idx.size == 0:
            return
        down = self.levels[level + 1]
        child = lv.codes[idx][:, None] + self.child_offsets(level)[None, :]
        cidx = down.find(child)
        present = cidx >= 0
        safe = np.where(present, cidx, 0)
        c_any = down.any_obs[safe] & present
        c_all = down.all_obs[safe] & present
        c_val = np.where(c_any, down.value[safe], -np.inf)
        mx = c_val.max(axis=1)
        anyo = c_any.any(axis=1)
        lv.value[idx] = np.where(anyo, mx, 0.0)
        lv.any_obs[idx] = anyo
        lv.all_obs[idx] = c_all.all(axis=1)

    def propagate_up(self, touched: list[np.ndarray] | None = None):
        """Restore parent summaries bottom-up.

        ``touched[level]`` lists node codes whose payload changed; ``None``
        recomputes every internal node.
        """
        BD = self.block_depth
        if touched is None:
            self.sync_block_summaries()
            for level in range(BD - 1, -1, -1):
                lv = self.levels[level]
                self.recompute_nodes(level, np.arange(len(lv)))
            return
        dirty = np.asarray(touched[BD], dtype=np.int64)
        for level in range(BD, 0, -1):
            parents = np.unique(self.parent_codes(dirty, level))
            up = self.levels[level - 1]
            pidx = up.find(parents)
            self.recompute_nodes(level - 1, pidx[pidx >= 0])
            dirty = np.union1d(parents, np.asarray(touched[level - 1], dtype=np.int64))

    # --- queries --------------------------------------------------------

    def query(self, point, min_scale: int = 0) -> VoxelData | None:
        """Data at the finest stored scale >= ``min_scale`` around ``point``.

        Scales 0-3 address block cells; larger scales address internal nodes
        (occupancy trees only). Returns ``None`` for unknown space.
        """
        v = self.to_voxel(np.asarray(point, dtype=np.float64).reshape(3))
        if np.any(v < 0) or np.any(v >= self.size_voxels):
            raise ValueError(f"point {point} outside map bounds")
        vi = np.floor(v).astype(np.int64)
        return self.query_voxel(vi, min_scale)

    def query_voxel(self, vi, min_scale: int = 0) -> VoxelData | None:
        x, y, z = (int(c) for c in vi)
        for level in range(self.block_depth + 1):
            lv = self.levels[level]
            code = self._key_from_coords(x, y, z, level)
            i = int(lv.find(np.array([code]))[0])
            if i < 0:
                return None
            scale = self.level_scale(level)
            if lv.leaf[i]:
                return VoxelData(float(lv.value[i]), 0.0, True, True, scale)
            if level < self.block_depth:
                if self.kind == OCCUPANCY and min_scale >= scale:
                    if not lv.any_obs[i]:
                        return None
                    return VoxelData(float(lv.value[i]), 0.0, True, bool(lv.all_obs[i]), scale)
                continue
            slot = int(lv.slot[i])
            s = max(int(self.pool.scale[slot]), min(int(min_scale), 3))
            n = BLOCK_SIDE >> s
            lx, ly, lz = ((c % BLOCK_SIDE) >> s for c in (x, y, z))
            j = int(K.OFFSETS[s]) + lx + n * (ly + n * lz)
            if not self.pool.obs_any[slot, j]:
                return None
            return VoxelData(float(self.pool.value[slot, j]), float(self.pool.weight[slot, j]),
                             True, bool(self.pool.obs_all[slot, j]), s)
        return None

    def lookup_voxels(self, vi: np.ndarray, min_scale: int = 0):
        """Vectorised block-cell lookup for integer voxel coords (N, 3).

        Returns ``(value, weight, observed, scale)`` arrays; uniform leaves
        report their value with weight 0.
        """
        vi = np.asarray(vi, dtype=np.int64).reshape(-1, 3)
        n = vi.shape[0]
        value = np.zeros(n)
        weight = np.zeros(n, dtype=np.float32)
        observed = np.zeros(n, dtype=bool)
        scale = np.full(n, -1, dtype=np.int64)
        inside = np.all((vi >= 0) & (vi < self.size_voxels), axis=1)
        pending = np.nonzero(inside)[0]
        base = encode_array(np.where(inside[:, None], vi, 0))
        for level in range(self.block_depth + 1):
            if pending.size == 0:
                break
            lv = self.levels[level]
            shift = 3 * (self.max_depth - level)
            idx = lv.find((base[pending] >> shift) << shift)
            found = idx >= 0
            pending, idx = pending[found], idx[found]
            leaf = lv.leaf[idx]
            lp = pending[leaf]
            value[lp] = lv.value[idx[leaf]]
            observed[lp] = True
            scale[lp] = self.level_scale(level)
            pending, idx = pending[~leaf], idx[~leaf]
            if level == self.block_depth and pending.size:
                slot = lv.slot[idx]
                s = np.maximum(self.pool.scale[slot], min(min_scale, 3))
                nn = BLOCK_SIDE >> s
                loc = (vi[pending] % BLOCK_SIDE) >> s[:, None]
                j = K.OFFSETS[s] + loc[:, 0] + nn * (loc[:, 1] + nn * loc[:, 2])
                value[pending] = self.pool.value[slot, j]
                weight[pending] = self.pool.weight[slot, j]
                observed[pending] = self.pool.obs_any[slot, j]
                scale[pending] = s
        return value, weight, observed, scale

    # --- serialisation --------------------------------------------------

    def to_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Flat array dict (e.g. for ``np.savez``); block slots are compacted."""
        out = {
            prefix + "meta": np.array([self.voxel_dim, self.max_depth, self.kind == OCCUPANCY]),
            prefix + "origin": self.origin.copy(),
        }
        p = self.pool
        for level, lv in enumerate(self.levels):
            slot = lv.slot.copy()
            for name in _Level.FIELDS:
                out[f"{prefix}L{level}_{name}"] = getattr(lv, name) if name != "slot" else slot
        _, slots = self.allocated_slots()
        remap = np.full(p.capacity, -1, dtype=np.int64)
        remap[slots] = np.arange(slots.size)
        bd = f"{prefix}L{self.block_depth}_slot"
        out[bd] = np.where(out[bd] >= 0, remap[np.maximum(out[bd], 0)], -1)
        for name in ("value", "weight", "obs_any", "obs_all", "scale", "coord", "frame"):
            out[f"{prefix}pool_{name}"] = getattr(p, name)[slots]
        return out

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "") -> "Octree":
        voxel, depth, occ = arrays[prefix + "meta"]
        tree = cls(float(voxel), origin=arrays[prefix + "origin"],
                   kind=OCCUPANCY if occ else TSDF, max_depth=int(depth))
        for level, lv in enumerate(tree.levels):
            for name in _Level.FIELDS:
                setattr(lv, name, np.array(arrays[f"{prefix}L{level}_{name}"]))
        coord = np.asarray(arrays[prefix + "pool_coord"])
        slots = tree.pool.alloc(coord) if len(coord) else np.empty(0, dtype=np.int64)
        for name in ("value", "weight", "obs_any", "obs_all", "scale", "frame"):
            getattr(tree.pool, name)[slots] = arrays[f"{prefix}pool_{name}"]
        return tree
