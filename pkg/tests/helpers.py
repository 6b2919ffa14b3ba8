"""Independent oracles and fixtures shared by the test modules."""
from __future__ import annotations

import numpy as np

from elasticmap import geometry, simulate
from elasticmap.sensor import SphericalSensorModel

ACCEPTANCE_LINES: list[str] = []

# 64^3 oracle grid: 0.125 m voxels, 8 m cube centred on the origin
ORACLE_VOXEL = 0.125
ORACLE_DEPTH = 6
ORACLE_ORIGIN = np.array([-4.0, -4.0, -4.0])


def oracle_scene() -> simulate.Scene:
    return simulate.Scene([
        simulate.BoxRoom(np.array([-3.0, -2.5, -1.2]), np.array([3.0, 2.5, 1.6])),
        simulate.Sphere(np.array([1.2, 0.8, 0.0]), 0.6),
    ])


def oracle_model() -> SphericalSensorModel:
    # short max range so part of the room returns clipped rays
    return SphericalSensorModel.os1_64(width=256, height=32, max_range=3.5)


def oracle_poses(n: int = 20, seed: int = 7) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(n):
        yaw = rng.uniform(-np.pi, np.pi)
        tilt = geometry.axis_angle(rng.normal(size=3), rng.uniform(0, 0.15))
        R = tilt @ geometry.axis_angle([0, 0, 1], yaw)
        t = np.array([rng.uniform(-1.8, 0.2), rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5)])
        poses.append(geometry.make_transform(R, t))
    return poses


def dense_centres(n: int = 64, voxel: float = ORACLE_VOXEL, origin=ORACLE_ORIGIN):
    idx = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"), -1)
    idx = idx.reshape(-1, 3)
    return idx, origin + (idx + 0.5) * voxel


def nearest_pixel(points: np.ndarray, model: SphericalSensorModel):
    """Brute-force nearest beam by argmin over angle differences.

    Returns ``(row, col, inside)``; ``inside`` is false beyond half a row gap
    above the top beam or below the bottom beam.
    """
    el = np.arctan2(points[:, 2], np.hypot(points[:, 0], points[:, 1]))
    az = np.arctan2(points[:, 1], points[:, 0])
    row = np.argmin(np.abs(el[:, None] - model.elevations[None, :]), axis=1)
    col = np.empty(len(points), dtype=np.int64)
    for a in range(0, len(points), 65536):
        dz = np.mod(az[a:a + 65536, None] - model.azimuths[None, :] + np.pi, 2 * np.pi) - np.pi
        col[a:a + 65536] = np.argmin(np.abs(dz), axis=1)
    e = np.sort(model.elevations)
    lo = e[0] - (e[1] - e[0]) / 2
    hi = e[-1] + (e[-1] - e[-2]) / 2
    inside = (el >= lo) & (el < hi)
    return row, col, inside


def _scan_terms(centres, cloud, T, model):
    pts = geometry.transform_points(geometry.invert(T), centres)
    row, col, inside = nearest_pixel(pts, model)
    r = np.linalg.norm(cloud, axis=2)
    valid = (r > 0) & (r >= model.min_range)
    clipped = valid & (r > model.max_range)
    d_r = np.minimum(r, model.max_range)[row, col]
    return np.linalg.norm(pts, axis=1), d_r, inside & valid[row, col], clipped[row, col]


def dense_oracles(clouds, poses, model, k_tau=4.0, w_max=100.0, l_min=-0.4, l_max=1.0,
                  clamp=(-5.0, 5.0), k_sigma=3.0, n=64, voxel=ORACLE_VOXEL, origin=ORACLE_ORIGIN):
    """Scale-0 TSDF and log-odds over every voxel of a dense grid.

    Returns ``(tsdf, tsdf_weight, log_odds, observed)`` flattened in
    ``dense_centres`` order.
    """
    _, centres = dense_centres(n, voxel, origin)
    tsdf = np.zeros(len(centres))
    weight = np.zeros(len(centres))
    occ = np.zeros(len(centres))
    observed = np.zeros(len(centres), dtype=bool)
    tau = k_tau * voxel
    sigma = k_sigma * voxel
    for cloud, T in zip(clouds, poses):
        d_v, d_r, ok, clipped = _scan_terms(centres, cloud, T, model)
        sdf = d_r - d_v
        upd = ok & ~clipped & (np.abs(sdf) <= tau)
        f = np.clip(sdf / tau, -1, 1)
        tsdf[upd] = (tsdf[upd] * weight[upd] + f[upd]) / (weight[upd] + 1)
        weight[upd] = np.minimum(weight[upd] + 1, w_max)

        delta = np.clip(l_max * (d_v - d_r) / sigma, l_min, l_max)
        delta = np.where(clipped, l_min, delta)
        reach = np.where(clipped, d_r, d_r + 3 * sigma)
        upd = ok & (d_v <= reach)
        occ[upd] = np.clip(occ[upd] + delta[upd], *clamp)
        observed |= upd
    return tsdf, weight, occ, observed


def render(scene, poses, model):
    return [simulate.scan(scene, T, model) for T in poses]


def bit_interleave(x: int, y: int, z: int, bits: int = 21) -> int:
    """Reference Morton code from interleaved binary strings (z y x per triad)."""
    bx, by, bz = (format(v, f"0{bits}b") for v in (x, y, z))
    return int("".join(c + b + a for a, b, c in zip(bx, by, bz)), 2)


def occupancy_summary_oracle(tree):
    """Max log-odds / any-observed of every internal node, recomputed from the leaves.

    Walks the allocated blocks (observed cells at their current scale) and the
    uniform leaves and pushes each value into all of its ancestors.
    """
    from elasticmap.octree import _kernels as K

    best = {}

    def push(code, level, value, observed):
        for lev in range(level - 1, -1, -1):
            shift = 3 * (tree.max_depth - lev)
            key = (lev, (code >> shift) << shift)
            mx, anyo = best.get(key, (-np.inf, False))
            if observed:
                best[key] = (max(mx, value), True)
            else:
                best[key] = (mx, anyo)

    for key, blk in tree.iterate_allocated():
        s = blk.current_scale
        n = 8 >> s
        o = int(K.OFFSETS[s])
        obs = tree.pool.obs_any[blk.slot, o:o + n ** 3]
        vals = tree.pool.value[blk.slot, o:o + n ** 3]
        if obs.any():
            push(key.code, tree.block_depth, float(vals[obs].max()), True)
        else:
            push(key.code, tree.block_depth, 0.0, False)
    for level, codes, values in tree.uniform_leaves():
        for c, v in zip(codes.tolist(), values.tolist()):
            push(c, level, v, True)
    return best
