"""Multi-resolution log-odds occupancy integration.

Measurements follow a piecewise-linear profile along each ray: a constant free
value in front of the surface, a linear ramp crossing zero at the measured
range, and no update further than three surface thicknesses behind it. Regions
entirely inside the free part of a scan are updated as single coarse nodes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .octree import _kernels as K
from .octree.frustum import (FREE, MIXED, SKIP, IntegrationStats, ScanFrame, WindowTables,
                             block_radius, block_scales, classify, drop_new_blocks)
from .octree.tree import OCCUPANCY, Octree
from .sensor import DepthImage, SphericalSensorModel, select_integration_scales


@dataclass
class OccupancyConfig:
    l_min: float = -0.4
    l_max: float = 1.0
    clamp_min: float = -5.0
    clamp_max: float = 5.0
    k_sigma: float = 3.0
    fixed_scale: int | None = None

    def __post_init__(self):
        if not self.l_min < 0 < self.l_max:
            raise ValueError("need l_min < 0 < l_max")
        if self.clamp_min > self.l_min or self.clamp_max < self.l_max:
            raise ValueError("clamp bounds must enclose [l_min, l_max]")
        if self.k_sigma <= 0:
            raise ValueError("k_sigma must be positive")

    def sigma(self, voxel_dim: float, scale):
        return self.k_sigma * voxel_dim * np.exp2(scale)


class Occupancy(enum.Enum):
    FREE = "free"
    OCCUPIED = "occupied"
    UNKNOWN = "unknown"


class OccupancyQuery(NamedTuple):
    state: Occupancy
    log_odds: float
    scale: int


def log_odds_measurement(d_v: float, d_r: float, scale: int, config: OccupancyConfig,
                         voxel_dim: float) -> float | None:
    """Log-odds increment for a cell at along-ray distance ``d_v``.

    Returns ``None`` behind the surface band, where space stays unobserved.
    """
    sigma = config.k_sigma * voxel_dim * (1 << scale)
    if d_v > d_r + 3.0 * sigma:
        return None
    return float(np.clip(config.l_max * (d_v - d_r) / sigma, config.l_min, config.l_max))


def _pixel_bounds(frame: ScanFrame, voxel_dim: float, config: OccupancyConfig):
    d = frame.ranges
    hit = frame.valid & ~frame.clipped
    theta = frame.model.min_ray_angle
    # coarsest scale any block reaching this pixel's free part / band can take
    if config.fixed_scale is None:
        rb = block_radius(voxel_dim)
        s_free = select_integration_scales(d + rb, theta, voxel_dim)
        reach = d + 3.0 * config.sigma(voxel_dim, 3) + rb
        s_hi = select_integration_scales(reach, theta, voxel_dim)
    else:
        s_free = s_hi = np.full(d.shape, config.fixed_scale)
    # strictly-free limit of the plateau and farthest updated distance
    free_lim = d + config.sigma(voxel_dim, s_free) * config.l_min / config.l_max - 1e-7
    upd_lim = d + 3.0 * config.sigma(voxel_dim, s_hi) + 1e-7
    F = np.where(hit, free_lim, np.where(frame.clipped, d - 1e-7, -np.inf))
    U = np.where(hit, upd_lim, np.where(frame.clipped, d + 1e-7, -np.inf))
    return F, U


def integrate_scan_occupancy(tree: Octree, depth: DepthImage, T_tree_from_lidar: np.ndarray,
                             model: SphericalSensorModel, config: OccupancyConfig | None = None,
                             frame_id: int = 0) -> IntegrationStats:
    """Fuse one range image into an occupancy octree."""
    config = config or OccupancyConfig()
    if tree.kind != OCCUPANCY:
        raise ValueError("tree does not hold occupancy data")
    frame = ScanFrame.prepare(depth, T_tree_from_lidar, model)
    stats = frame.base_stats(depth, T_tree_from_lidar, tree)
    if stats.rays_processed == 0:
        return stats
    F, U = _pixel_bounds(frame, tree.voxel_dim, config)
    tables = WindowTables(F, U)
    lo, hi = config.clamp_min, config.clamp_max
    free_val = float(np.clip(config.l_min, lo, hi))
    BD = tree.block_depth
    touched: list[list[np.ndarray]] = [[] for _ in range(BD + 1)]
    created: list[list[np.ndarray]] = [[] for _ in range(BD + 1)]
    pool = tree.pool

    frontier = np.zeros(1, dtype=np.int64)
    for level in range(BD + 1):
        if frontier.size == 0:
            break
        cls = classify(tree, frontier, level, frame, tables, K.MODE_OCC, False)
        keep = cls != SKIP
        codes, cls = frontier[keep], cls[keep]
        lv = tree.levels[level]
        idx = lv.find(codes)
        exists = idx >= 0
        is_leaf = np.zeros(codes.size, dtype=bool)
        is_block = np.zeros(codes.size, dtype=bool)
        is_leaf[exists] = lv.leaf[idx[exists]]
        is_block[exists] = lv.slot[idx[exists]] >= 0
        free = cls == FREE

        if level < BD:
            # coarse free-space update of whole nodes
            upd_leaf = free & is_leaf
            li = idx[upd_leaf]
            lv.value[li] = np.clip(lv.value[li] + config.l_min, lo, hi)
            new_leaf = free & ~exists
            stats.free_nodes_updated += int(upd_leaf.sum() + new_leaf.sum())
            touched[level].append(codes[upd_leaf])
            split = ~free & is_leaf
            if split.any():
                tree.split(level, idx[split])
            lv.insert(codes[new_leaf], value=free_val, any_obs=True, all_obs=True, leaf=True)
            created[level].append(codes[new_leaf])
            touched[level].append(codes[new_leaf])
            desc = ~(upd_leaf | new_leaf)
            frontier = (codes[desc][:, None] + tree.child_offsets(level)[None, :]).ravel()
            continue

        # block depth
        upd_leaf = free & is_leaf
        li = idx[upd_leaf]
        lv.value[li] = np.clip(lv.value[li] + config.l_min, lo, hi)
        free_slots = lv.slot[idx[free & is_block]]
        if free_slots.size:
            K.free_update_blocks(pool.value, pool.weight, pool.obs_any, pool.obs_all, pool.scale,
                                 pool.frame, free_slots, np.full(free_slots.size, config.l_min),
                                 lo, hi, frame_id,
                                 stats.cells_per_scale)
        mixed = cls == MIXED
        to_block = mixed & is_leaf
        if to_block.any():
            tree._materialise(idx[to_block])
        new_leaf = free & ~exists
        new_block = mixed & ~exists
        stats.free_nodes_updated += int(upd_leaf.sum() + new_leaf.sum())
        lv.insert(codes[new_leaf], value=free_val, any_obs=True, all_obs=True, leaf=True)
        lv.insert(codes[new_block])
        fresh = codes[new_block]
        fidx = lv.find(fresh)
        if fidx.size:
            tree._materialise(fidx)
        mixed_codes = codes[mixed]
        slots = lv.slot[lv.find(mixed_codes)]
        scales = block_scales(tree, slots, frame, model.min_ray_angle, config.fixed_scale)
        counts = K.integrate_occupancy_blocks(
            pool.value, pool.weight, pool.obs_any, pool.obs_all, pool.scale, pool.coord, pool.frame,
            slots, scales, frame.rot, frame.trans, tree.origin, tree.voxel_dim,
            frame.ranges, frame.valid, frame.clipped, frame.el_bounds, frame.az_bounds,
            config.l_min, config.l_max, lo, hi, config.k_sigma, frame_id, stats.cells_per_scale)
        empty_new = np.isin(mixed_codes, fresh) & (counts == 0)
        drop_new_blocks(tree, mixed_codes[empty_new])
        kept_new = fresh[~np.isin(fresh, mixed_codes[empty_new])]
        created[level].extend([codes[new_leaf], kept_new])
        changed = np.concatenate([codes[upd_leaf], codes[new_leaf], codes[free & is_block],
                                  mixed_codes[counts > 0]])
        touched[level].append(changed)
        stats.blocks_allocated = int(kept_new.size)
        stats.blocks_touched = int(free_slots.size + (counts > 0).sum())

    for level in range(BD, 0, -1):
        if created[level]:
            tree.ensure_ancestors(np.concatenate(created[level]), level)
    flat = [np.concatenate(t) if t else np.empty(0, dtype=np.int64) for t in touched]
    bl = tree.block_level
    bidx = bl.find(flat[BD])
    tree.sync_block_summaries(bidx[bidx >= 0])
    tree.propagate_up(flat)
    return stats


def up_propagate(tree: Octree) -> None:
    """Recompute every internal node's max log-odds and observed flags."""
    tree.propagate_up(None)


def classify_value(value: float, observed: bool, all_observed: bool) -> Occupancy:
    if not observed:
        return Occupancy.UNKNOWN
    if value > 0:
        return Occupancy.OCCUPIED
    if value < 0 and all_observed:
        return Occupancy.FREE
    return Occupancy.UNKNOWN


def query_occupancy(tree: Octree, point, min_scale: int = 0) -> OccupancyQuery:
    """Classify the cell around ``point`` at the finest scale >= ``min_scale``.

    Coarse cells report the maximum log-odds of their subtree, so a coarse
    ``FREE`` answer implies every voxel inside is free.
    """
    data = tree.query(point, min_scale)
    if data is None:
        scale = max(min_scale, 0)
        return OccupancyQuery(Occupancy.UNKNOWN, 0.0, scale)
    return OccupancyQuery(classify_value(data.value, data.observed, data.all_observed),
                          data.value, data.scale)


def classify_voxels(tree: Octree, vi: np.ndarray, min_scale: int = 0) -> np.ndarray:
    """Vectorised state per integer voxel: -1 free, 0 unknown, 1 occupied."""
    value, _, observed, _ = tree.lookup_voxels(vi, min_scale)
    out = np.zeros(value.shape, dtype=np.int8)
    out[observed & (value > 0)] = 1
    out[observed & (value < 0)] = -1
    return out
