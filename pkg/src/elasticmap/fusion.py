"""Rigid resampling of one octree's observed cells into another."""
from __future__ import annotations

import numpy as np

from . import geometry
from .octree import _kernels as K
from .octree.morton import encode_array
from .octree.tree import BLOCK_SIDE, OCCUPANCY, TSDF, Octree


def _cell_centres(tree: Octree, slots: np.ndarray, s: int):
    """Observed cells of blocks at scale ``s``: (slot rows, local index, centres, values, weights)."""
    n = BLOCK_SIDE >> s
    o = int(K.OFFSETS[s])
    obs = tree.pool.obs_any[slots, o:o + n ** 3]
    if tree.kind == TSDF:
        obs &= tree.pool.weight[slots, o:o + n ** 3] > 0
    b, i = np.nonzero(obs)
    loc = np.stack([i % n, (i // n) % n, i // (n * n)], axis=1)
    cs = 1 << s
    vox = tree.pool.coord[slots[b]] + (loc + 0.5) * cs
    pts = tree.origin + vox * tree.voxel_dim
    return pts, tree.pool.value[slots[b], o + i], tree.pool.weight[slots[b], o + i].astype(np.float64)


def fuse_tree_into(target: Octree, source: Octree, T_target_from_source: np.ndarray,
                   w_max: float = 100.0, clamp: tuple[float, float] = (-5.0, 5.0)) -> int:
    """Fuse every observed cell of ``source`` into ``target``.

    Cells keep their scale: each transformed cell centre is assigned to the
    target cell of the same scale containing it, refining coarser target
    blocks and broadcasting into finer ones. Unobserved target cells are
    copied, observed ones are fused (weighted mean for TSDF, clamped log-odds
    sum for occupancy). Returns the number of source cells written.
    """
    if target.kind != source.kind:
        raise ValueError("cannot fuse trees of different kinds")
    if not np.isclose(target.voxel_dim, source.voxel_dim):
        raise ValueError("cannot fuse trees of different voxel size")
    T = np.asarray(T_target_from_source, dtype=np.float64)
    mode = K.MODE_TSDF if target.kind == TSDF else K.MODE_OCC
    lo, hi = clamp
    pool = target.pool
    written = 0
    touched_slots = []
    _, src_slots = source.allocated_slots()
    for s in range(4):
        group = src_slots[source.pool.scale[src_slots] == s]
        if group.size == 0:
            continue
        pts, val, wt = _cell_centres(source, group, s)
        vox = np.floor(target.to_voxel(geometry.transform_points(T, pts))).astype(np.int64)
        inside = np.all((vox >= 0) & (vox < target.size_voxels), axis=1)
        vox, val, wt = vox[inside], val[inside], wt[inside]
        if vox.shape[0] == 0:
            continue
        base = vox - vox % BLOCK_SIDE
        slots = target.ensure_blocks(encode_array(base))
        cells = (vox % BLOCK_SIDE) >> s
        K.fuse_cells(pool.value, pool.weight, pool.obs_any, pool.obs_all, pool.scale, slots,
                     np.ascontiguousarray(cells), s, val, wt, mode, w_max, lo, hi)
        touched_slots.append(slots)
        written += int(vox.shape[0])
    if touched_slots:
        slots = np.unique(np.concatenate(touched_slots))
        K.propagate_blocks(pool.value, pool.weight, pool.obs_any, pool.obs_all, pool.scale,
                           slots, mode)
    if source.kind == OCCUPANCY:
        written += _fuse_uniform_leaves(target, source, T, lo, hi)
    target.propagate_up(None)
    return written


def _fuse_uniform_leaves(target: Octree, source: Octree, T: np.ndarray, lo: float, hi: float) -> int:
    """Apply coarse free-space leaves of ``source`` to the same-level node of ``target``."""
    count = 0
    created: list[tuple[int, np.ndarray]] = []
    for level, codes, values in source.uniform_leaves():
        centres = geometry.transform_points(T, source.node_centers(codes, level))
        vox = np.floor(target.to_voxel(centres)).astype(np.int64)
        inside = np.all((vox >= 0) & (vox < target.size_voxels), axis=1)
        side = target.node_side(level)
        pend = encode_array(vox[inside] - vox[inside] % side)
        vals = values[inside]
        count += int(pend.size)
        for lv_i in range(level, target.block_depth + 1):
            if pend.size == 0:
                break
            pend, inv = np.unique(pend, return_inverse=True)
            summed = np.zeros(pend.size)
            np.add.at(summed, inv.reshape(-1), vals)
            vals = summed
            for up in range(lv_i):
                target._split_leaves_above(pend, up)
            lv = target.levels[lv_i]
            idx = lv.find(pend)
            exists = idx >= 0
            missing = ~exists
            lv.insert(pend[missing], value=np.clip(vals[missing], lo, hi), any_obs=True,
                      all_obs=True, leaf=True)
            created.append((lv_i, pend[missing]))
            idx = lv.find(pend)
            leaf = exists & lv.leaf[np.where(exists, idx, 0)]
            lv.value[idx[leaf]] = np.clip(lv.value[idx[leaf]] + vals[leaf], lo, hi)
            inner = exists & ~leaf
            if lv_i == target.block_depth:
                blk = inner & (lv.slot[np.where(exists, idx, 0)] >= 0)
                slots = lv.slot[idx[blk]]
                if slots.size:
                    p = target.pool
                    K.free_update_blocks(p.value, p.weight, p.obs_any, p.obs_all, p.scale, p.frame,
                                         slots, vals[blk], lo, hi, -1, np.zeros(4, dtype=np.int64))
                break
            offs = target.child_offsets(lv_i)
            pend = (pend[inner][:, None] + offs[None, :]).ravel()
            vals = np.repeat(vals[inner], 8)
    for lv_i, codes in created:
        target.ensure_ancestors(codes, lv_i)
    return count
