"""Per-scan range-image preparation and conservative node/frustum tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import geometry
from ..sensor import DepthImage, SphericalSensorModel, ray_directions, select_integration_scales
from . import _kernels as K
from .tree import BLOCK_SIDE, Octree

SKIP, FREE, MIXED = K.SKIP, K.FREE, K.MIXED
_EPS = 1e-7


@dataclass
class IntegrationStats:
    rays_processed: int = 0
    rays_skipped: int = 0
    rays_out_of_bounds: int = 0
    blocks_touched: int = 0
    blocks_allocated: int = 0
    free_nodes_updated: int = 0
    cells_per_scale: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))


@dataclass
class ScanFrame:
    """A depth image re-ordered into angle-sorted layout plus its pose."""

    rot: np.ndarray
    trans: np.ndarray
    ranges: np.ndarray
    valid: np.ndarray
    clipped: np.ndarray
    el_bounds: np.ndarray
    az_bounds: np.ndarray
    model: SphericalSensorModel

    @classmethod
    def prepare(cls, depth: DepthImage, T_tree_from_lidar: np.ndarray,
                model: SphericalSensorModel) -> "ScanFrame":
        if depth.shape != (model.height, model.width):
            raise ValueError(f"depth image {depth.shape} does not match sensor "
                             f"{model.height}x{model.width}")
        T = np.asarray(T_tree_from_lidar, dtype=np.float64)
        if not geometry.is_rigid(T):
            raise ValueError("T_tree_from_lidar is not a rigid transform")
        inv = geometry.invert(T)
        t = model.tables
        sel = np.ix_(t["el_order"], t["az_order"])
        return cls(
            rot=np.ascontiguousarray(inv[:3, :3]),
            trans=np.ascontiguousarray(inv[:3, 3]),
            ranges=np.ascontiguousarray(depth.ranges[sel], dtype=np.float64),
            valid=np.ascontiguousarray(depth.valid[sel]),
            clipped=np.ascontiguousarray(depth.clipped[sel]),
            el_bounds=t["el_bounds"],
            az_bounds=t["az_bounds"],
            model=model,
        )

    def base_stats(self, depth: DepthImage, T_tree_from_lidar: np.ndarray, tree: Octree) -> IntegrationStats:
        st = IntegrationStats()
        st.rays_processed = int(depth.valid.sum())
        st.rays_skipped = int(depth.valid.size - st.rays_processed)
        if st.rays_processed:
            dirs = _directions(self.model)[depth.valid]
            ends = geometry.transform_points(T_tree_from_lidar, dirs * depth.ranges[depth.valid][:, None])
            st.rays_out_of_bounds = int((~tree.in_bounds(ends)).sum())
        return st

    def to_sensor(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rot.T + self.trans


_DIR_CACHE: dict[int, tuple[SphericalSensorModel, np.ndarray]] = {}


def _directions(model: SphericalSensorModel) -> np.ndarray:
    hit = _DIR_CACHE.get(id(model))
    if hit is None or hit[0] is not model:
        hit = (model, ray_directions(model))
        _DIR_CACHE[id(model)] = hit
    return hit[1]


def block_radius(voxel_dim: float) -> float:
    return math.sqrt(3.0) / 2.0 * BLOCK_SIDE * voxel_dim


class WindowTables:
    """Row-wise min/max sparse tables over column windows of a scan."""

    def __init__(self, min_bound: np.ndarray, max_bound: np.ndarray):
        self.min_table = K.build_sparse_table(np.concatenate([min_bound, min_bound], axis=1), True)
        self.max_table = K.build_sparse_table(np.concatenate([max_bound, max_bound], axis=1), False)


def classify(tree: Octree, codes: np.ndarray, level: int, frame: ScanFrame,
             tables: WindowTables, mode: int, front_skip: bool) -> np.ndarray:
    centers = frame.to_sensor(tree.node_centers(codes, level))
    rho = math.sqrt(3.0) / 2.0 * tree.node_side(level) * tree.voxel_dim
    radius = np.full(codes.shape[0], rho)
    return K.classify_nodes(np.ascontiguousarray(centers), radius, tables.min_table,
                            tables.max_table, frame.el_bounds, frame.az_bounds, mode, front_skip)


def block_scales(tree: Octree, slots: np.ndarray, frame: ScanFrame, min_ray_angle: float,
                 fixed_scale: int | None) -> np.ndarray:
    if fixed_scale is not None:
        return np.full(slots.shape[0], int(fixed_scale), dtype=np.int64)
    centers = tree.origin + (tree.pool.coord[slots] + BLOCK_SIDE / 2.0) * tree.voxel_dim
    d = np.linalg.norm(frame.to_sensor(centers), axis=1)
    return select_integration_scales(d, min_ray_angle, tree.voxel_dim)


def drop_new_blocks(tree: Octree, codes: np.ndarray):
    """Forget freshly inserted block nodes whose ancestors are not linked yet."""
    lv = tree.block_level
    idx = lv.find(codes)
    idx = idx[idx >= 0]
    slots = lv.slot[idx]
    tree.pool.release(slots[slots >= 0])
    lv.remove(idx)
