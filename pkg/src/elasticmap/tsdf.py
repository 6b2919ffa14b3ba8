"""Multi-resolution truncated signed distance integration and meshing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage.measure import marching_cubes

from . import geometry
from .octree import _kernels as K
from .octree.frustum import (MIXED, IntegrationStats, ScanFrame, WindowTables, block_radius,
                             block_scales, classify, drop_new_blocks)
from .octree.tree import BLOCK_SIDE, TSDF, Octree
from .sensor import DepthImage, SphericalSensorModel, select_integration_scales


@dataclass
class TsdfConfig:
    k_tau: float = 4.0
    w_max: float = 100.0
    fixed_scale: int | None = None

    def __post_init__(self):
        if self.k_tau <= 0 or self.w_max < 1:
            raise ValueError("need k_tau > 0 and w_max >= 1")

    def truncation(self, voxel_dim: float, scale):
        return self.k_tau * voxel_dim * np.exp2(scale)


def _pixel_bounds(frame: ScanFrame, voxel_dim: float, config: TsdfConfig):
    d = frame.ranges
    usable = frame.valid & ~frame.clipped
    if config.fixed_scale is None:
        reach = d + config.truncation(voxel_dim, 3) + block_radius(voxel_dim)
        s_hi = select_integration_scales(reach, frame.model.min_ray_angle, voxel_dim)
    else:
        s_hi = np.full(d.shape, config.fixed_scale)
    tau = config.truncation(voxel_dim, s_hi)
    lo = np.where(usable, d - tau - 1e-7, np.inf)
    hi = np.where(usable, d + tau + 1e-7, -np.inf)
    return usable, lo, hi


def integrate_scan_tsdf(tree: Octree, depth: DepthImage, T_tree_from_lidar: np.ndarray,
                        model: SphericalSensorModel, config: TsdfConfig | None = None,
                        frame_id: int = 0) -> IntegrationStats:
    """Fuse one range image into a TSDF octree.

    Only blocks whose cells fall inside some pixel's truncation band are
    visited. Returns beyond ``max_range`` carry no surface and are ignored.
    """
    config = config or TsdfConfig()
    if tree.kind != TSDF:
        raise ValueError("tree does not hold TSDF data")
    frame = ScanFrame.prepare(depth, T_tree_from_lidar, model)
    stats = frame.base_stats(depth, T_tree_from_lidar, tree)
    usable, lo, hi = _pixel_bounds(frame, tree.voxel_dim, config)
    if not usable.any():
        return stats
    tables = WindowTables(lo, hi)
    BD = tree.block_depth

    frontier = np.zeros(1, dtype=np.int64)
    for level in range(BD):
        cls = classify(tree, frontier, level, frame, tables, K.MODE_TSDF, True)
        frontier = frontier[cls == MIXED]
        if frontier.size == 0:
            return stats
        frontier = (frontier[:, None] + tree.child_offsets(level)[None, :]).ravel()
    cls = classify(tree, frontier, BD, frame, tables, K.MODE_TSDF, True)
    codes = frontier[cls == MIXED]
    if codes.size == 0:
        return stats

    lv = tree.block_level
    exists = lv.find(codes) >= 0
    fresh = codes[~exists]
    lv.insert(fresh)
    if fresh.size:
        tree._materialise(lv.find(fresh))
    pool = tree.pool
    slots = lv.slot[lv.find(codes)]
    scales = block_scales(tree, slots, frame, model.min_ray_angle, config.fixed_scale)
    counts = K.integrate_tsdf_blocks(
        pool.value, pool.weight, pool.obs_any, pool.obs_all, pool.scale, pool.coord, pool.frame,
        slots, scales, frame.rot, frame.trans, tree.origin, tree.voxel_dim,
        frame.ranges, np.ascontiguousarray(usable), frame.el_bounds, frame.az_bounds,
        config.k_tau, config.w_max, frame_id, stats.cells_per_scale)
    empty_new = ~exists & (counts == 0)
    drop_new_blocks(tree, codes[empty_new])
    kept_new = codes[~exists & (counts > 0)]
    tree.ensure_ancestors(kept_new, BD)
    changed = codes[counts > 0]
    touched = [np.empty(0, dtype=np.int64) for _ in range(BD)] + [changed]
    tree.sync_block_summaries(lv.find(changed))
    tree.propagate_up(touched)
    stats.blocks_touched = int((counts > 0).sum())
    stats.blocks_allocated = int(kept_new.size)
    return stats


def fuse_tsdf_cells(v_t, w_t, v_s, w_s, w_max: float = 100.0):
    """Weighted-mean fusion of source cells into target cells.

    An unobserved target (weight 0) takes the source unchanged. Returns
    ``(value, weight)`` arrays.
    """
    v_t, w_t, v_s, w_s = (np.asarray(a, dtype=np.float64) for a in (v_t, w_t, v_s, w_s))
    tot = w_t + w_s
    mean = np.where(tot > 0, (v_t * w_t + v_s * w_s) / np.where(tot > 0, tot, 1.0), v_t)
    value = np.where(w_t > 0, mean, v_s)
    weight = np.where(w_t > 0, np.minimum(tot, w_max), w_s)
    return value, weight


def query_tsdf(tree: Octree, point, min_scale: int = 0):
    """``(sdf, weight, scale)`` at ``point`` or ``None`` if unobserved."""
    data = tree.query(point, min_scale)
    if data is None or data.weight <= 0:
        return None
    return data.value, data.weight, data.scale


def _refine_vertices(vol: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Redo the edge interpolation in float64 (marching cubes returns float32)."""
    v = verts.astype(np.float64)
    grid = np.round(v)
    off = np.abs(v - grid) > 1e-3
    out = grid.copy()
    rows = np.nonzero(off.any(axis=1))[0]
    if rows.size:
        axis = np.argmax(off[rows], axis=1)
        i0 = grid[rows].astype(np.int64)
        i0[np.arange(rows.size), axis] = np.floor(v[rows, axis]).astype(np.int64)
        i1 = i0.copy()
        i1[np.arange(rows.size), axis] += 1
        a = vol[i0[:, 0], i0[:, 1], i0[:, 2]]
        b = vol[i1[:, 0], i1[:, 1], i1[:, 2]]
        out[rows] = i0
        out[rows, axis] += a / (a - b)
    return out


def _mesh_group(tree: Octree, slots: np.ndarray, s: int):
    n = BLOCK_SIDE >> s
    m = n + 1
    cs = 1 << s
    coords = tree.pool.coord[slots]
    g = np.arange(m)
    gx, gy, gz = np.meshgrid(g, g, g, indexing="ij")
    local = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    # voxel coordinates of every grid sample (cell corners at scale s)
    vox = coords[:, None, :] + local[None, :, :] * cs
    value, weight, observed, _ = tree.lookup_voxels(vox.reshape(-1, 3), min_scale=s)
    ok = observed & (weight > 0)
    vol = np.where(ok, value, 1.0).reshape(len(slots) * m, m, m)
    okv = ok.reshape(len(slots) * m, m, m)
    # a cube is meshed only if all 8 corners are observed
    cube = (okv[:-1, :-1, :-1] & okv[1:, :-1, :-1] & okv[:-1, 1:, :-1] & okv[:-1, :-1, 1:]
            & okv[1:, 1:, :-1] & okv[1:, :-1, 1:] & okv[:-1, 1:, 1:] & okv[1:, 1:, 1:])
    # skimage gates each cube by the mask at its upper corner
    mask = np.zeros_like(okv)
    mask[1:, 1:, 1:] = cube
    mask[::m] = False
    if not mask.any():
        return None
    cv = vol[:-1, :-1, :-1][cube]
    if not (cv.min() <= 0.0 <= cv.max()):
        return None
    try:
        verts, faces, _, _ = marching_cubes(vol, level=0.0, mask=mask, allow_degenerate=False)
    except (RuntimeError, ValueError):
        return None
    if len(faces) == 0:
        return None
    verts = _refine_vertices(vol, verts)
    blk = np.minimum((verts[:, 0] // m).astype(np.int64), len(slots) - 1)
    loc = verts.copy()
    loc[:, 0] -= blk * m
    pts = tree.origin + (coords[blk] + (loc + 0.5) * cs) * tree.voxel_dim
    return pts, faces


def extract_mesh(tree: Octree, T_map_from_tree: np.ndarray | None = None):
    """Zero-crossing triangle mesh of a TSDF tree as ``(vertices, faces)``.

    Each block is meshed at its own integration scale with samples shared
    across block faces; duplicate vertices are welded.
    """
    if tree.kind != TSDF:
        raise ValueError("tree does not hold TSDF data")
    _, slots = tree.allocated_slots()
    all_v, all_f = [], []
    offset = 0
    for s in range(4):
        group = slots[tree.pool.scale[slots] == s]
        if group.size == 0:
            continue
        res = _mesh_group(tree, group, s)
        if res is None:
            continue
        v, f = res
        all_v.append(v)
        all_f.append(f + offset)
        offset += len(v)
    if not all_v:
        return np.empty((0, 3)), np.empty((0, 3), dtype=np.int64)
    verts = np.concatenate(all_v)
    faces = np.concatenate(all_f).astype(np.int64)
    key = np.round(verts / (tree.voxel_dim * 1e-4)).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    verts = verts[first]
    faces = inv.reshape(-1)[faces]
    faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
                  & (faces[:, 0] != faces[:, 2])]
    if T_map_from_tree is not None:
        verts = geometry.transform_points(T_map_from_tree, verts)
    return verts, faces
