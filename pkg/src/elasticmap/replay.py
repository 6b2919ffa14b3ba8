"""Bundle replay with distance-based subsampling, metrics collection and benchmarks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry, simulate
from .io import MetricsRecord, load_cloud
from .metrics import resident_mb
from .octree.tree import TSDF, Octree
from .occupancy import integrate_scan_occupancy
from .sensor import SphericalSensorModel, cloud_to_depth_image
from .submaps import (LOOP_CLOSURE, ClusteringConfig, PoseGraph, RegisteredCloudList,
                      SubmapManager, process_stream)
from .tsdf import integrate_scan_tsdf


def with_max_range(model: SphericalSensorModel, max_range: float | None) -> SphericalSensorModel:
    if max_range is None:
        return model
    return SphericalSensorModel(model.azimuths, model.elevations, model.min_range,
                                float(max_range), model.min_ray_angle)


def subsample_nodes(graph: PoseGraph, every: float) -> np.ndarray:
    """Indices kept when feeding one scan per ``every`` metres travelled (0 keeps all)."""
    n = len(graph)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if every <= 0:
        return np.arange(n)
    pos = graph.lidar_positions()
    keep = [0]
    travelled = 0.0
    for k in range(1, n):
        travelled += float(np.linalg.norm(pos[k] - pos[k - 1]))
        if travelled >= every - 1e-9:
            keep.append(k)
            travelled = 0.0
    return np.array(keep, dtype=np.int64)


def subsample_list(rcl: RegisteredCloudList, every: float) -> tuple[RegisteredCloudList, np.ndarray]:
    """Reduced cloud list; loop edges are re-attached to the closest earlier kept node."""
    keep = subsample_nodes(rcl.graph, every)
    if len(keep) == len(rcl.graph):
        return rcl, keep
    new_index = np.searchsorted(keep, np.arange(len(rcl.graph)), side="right") - 1
    g = PoseGraph(extrinsic=rcl.graph.extrinsic.copy())
    for k in keep:
        g.add_node(rcl.graph.poses[k])
    for a, b in rcl.graph.loop_edges():
        na, nb = int(new_index[a]), int(new_index[b])
        if na != nb and (LOOP_CLOSURE, na, nb) not in g.edges:
            g.add_edge(LOOP_CLOSURE, na, nb)
    return RegisteredCloudList(g, [rcl.clouds[k] for k in keep]), keep


class _LazyCloud:
    """Cloud file loaded on first use."""

    def __init__(self, path):
        self.path = path

    def __array__(self, dtype=None, copy=None):
        arr = load_cloud(self.path)
        return arr if dtype is None else arr.astype(dtype)


@dataclass
class ReplayResult:
    manager: SubmapManager
    records: list = field(default_factory=list)
    kept_nodes: np.ndarray | None = None


def replay(rcl: RegisteredCloudList, model: SphericalSensorModel, pipeline: str = TSDF,
           voxel_dim: float = 0.065, subsample: float = 0.0,
           config: ClusteringConfig | None = None, fusion: bool = True,
           max_range: float | None = None, **kwargs) -> ReplayResult:
    """Run the submap pipeline over a cloud list and record per-scan metrics.

    Clouds may be arrays or PLY paths (loaded lazily, one at a time).
    """
    model = with_max_range(model, max_range)
    rcl, keep = subsample_list(rcl, subsample)
    clouds = [c if isinstance(c, np.ndarray) else _LazyCloud(c) for c in rcl.clouds]
    records = []
    clock = [time.perf_counter()]

    def on_scan(k, mgr, stats):
        now = time.perf_counter()
        cells = stats.cells_per_scale
        records.append(MetricsRecord(
            scan_index=k, node=int(keep[k]), integration_ms=(now - clock[0]) * 1e3,
            resident_mb=resident_mb(),
            allocated_bytes=sum(sm.tree.allocated_bytes() for sm in mgr.live),
            live_submaps=len(mgr.submaps), cells_s0=int(cells[0]), cells_s1=int(cells[1]),
            cells_s2=int(cells[2]), cells_s3=int(cells[3])))
        clock[0] = time.perf_counter()

    mgr = process_stream(RegisteredCloudList(rcl.graph, clouds), model, config, pipeline,
                         voxel_dim, fusion, on_scan=on_scan, **kwargs)
    return ReplayResult(mgr, records, keep)


def corridor_scans(n_scans: int, spacing: float = 2.0, model: SphericalSensorModel | None = None,
                   seed: int = 0, noise_std: float = 0.0):
    """Poses and organised clouds along a synthetic corridor."""
    model = model or SphericalSensorModel.os1_64()
    scene = simulate.corridor(length=n_scans * spacing + 70.0)
    poses = simulate.line_trajectory((n_scans - 1) * spacing, spacing, z=1.5)
    rng = np.random.default_rng(seed)
    clouds = [simulate.scan(scene, T, model, noise_std, rng) for T in poses]
    return poses, clouds, model


def bench(n_scans: int = 50, voxel_dim: float = 0.065, max_range: float = 60.0,
          pipeline: str = TSDF, spacing: float = 2.0, seed: int = 0) -> dict:
    """Integration timings into a single fresh map along a synthetic corridor.

    Returns first-scan time, per-scan times, the median and allocated bytes after
    every scan.
    """
    if n_scans < 1:
        raise ValueError("need at least one scan")
    model = SphericalSensorModel.os1_64(max_range=max_range)
    poses, clouds, _ = corridor_scans(n_scans, spacing, model, seed)
    integrate = integrate_scan_tsdf if pipeline == TSDF else integrate_scan_occupancy
    # warm the compiled kernels on a throwaway map
    warm = Octree(voxel_dim, 8 * voxel_dim * 16, kind=pipeline)
    integrate(warm, cloud_to_depth_image(clouds[0], model), np.eye(4), model)
    tree = Octree(voxel_dim, 400.0, kind=pipeline)
    times, sizes = [], []
    for k, (T, cloud) in enumerate(zip(poses, clouds)):
        t0 = time.perf_counter()
        integrate(tree, cloud_to_depth_image(cloud, model), T, model, frame_id=k)
        times.append(time.perf_counter() - t0)
        sizes.append(tree.allocated_bytes())
    return {"first_s": times[0], "median_s": float(np.median(times)), "times_s": times,
            "bytes_per_scan": sizes, "blocks": tree.block_count(),
            "allocated_bytes": tree.allocated_bytes()}


def synthetic_loop_list(laps: int = 1, radius: float = 20.0, spacing: float = 2.0,
                        model: SphericalSensorModel | None = None, drift_rate: float = 0.0,
                        closures: bool = True, seed: int = 0,
                        drift_direction=(0.0, 0.6, 0.8)):
    """Registered cloud list of a ring world traversed ``laps`` times.

    Clouds are rendered from the true poses; the graph carries the (optionally
    drifted) odometry poses; drift grows along ``drift_direction``. From the
    second lap on, each node gets a loop edge to the node one lap earlier.
    Returns ``(list, true_poses, scene, model)``.
    """
    model = model or SphericalSensorModel.os1_64(width=512, max_range=40.0)
    scene = simulate.loop_world(radius=radius, seed=seed)
    truth = simulate.circle_trajectory(radius, spacing, laps)
    per_lap = (len(truth) - 1) // laps
    odo = simulate.add_drift(truth, drift_rate, drift_direction) if drift_rate else truth
    g = PoseGraph()
    for T in odo:
        g.add_node(T)
    if closures:
        for k in range(per_lap, len(truth)):
            g.add_edge(LOOP_CLOSURE, k - per_lap, k)
    clouds = [simulate.scan(scene, T, model) for T in truth]
    return RegisteredCloudList(g, clouds), truth, scene, model


def ground_truth_cloud(rcl: RegisteredCloudList, truth, model: SphericalSensorModel,
                       stride: int = 1) -> np.ndarray:
    """All valid returns placed with the true poses (map frame)."""
    pts = []
    for T, cloud in zip(truth[::stride], rcl.clouds[::stride]):
        depth = cloud_to_depth_image(cloud, model)
        ok = depth.valid & ~depth.clipped
        pts.append(geometry.transform_points(T @ rcl.graph.extrinsic, cloud[ok]))
    return np.concatenate(pts)
