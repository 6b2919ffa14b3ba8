"""Pose-graph clustering into submaps, submap fusion and rigid pose correction."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .fusion import fuse_tree_into
from .occupancy import OccupancyConfig, integrate_scan_occupancy
from .octree.frustum import IntegrationStats
from .octree.tree import OCCUPANCY, TSDF, Octree
from .sensor import SphericalSensorModel, cloud_to_depth_image
from .tsdf import TsdfConfig, integrate_scan_tsdf

ODOMETRY = "odometry"
LOOP_CLOSURE = "loop_closure"


class GraphError(ValueError):
    pass


@dataclass
class PoseGraph:
    """Device poses ``T_map_from_body`` plus typed edges and the LiDAR extrinsic."""

    poses: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    extrinsic: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __len__(self) -> int:
        return len(self.poses)

    def add_node(self, T_map_from_body: np.ndarray, odometry: bool = True) -> int:
        T = np.asarray(T_map_from_body, dtype=np.float64)
        if not geometry.is_rigid(T):
            raise GraphError("node pose is not a rigid transform")
        self.poses.append(T.copy())
        k = len(self.poses) - 1
        if odometry and k > 0:
            self.edges.append((ODOMETRY, k - 1, k))
        return k

    def add_edge(self, kind: str, a: int, b: int) -> None:
        n = len(self.poses)
        if not (0 <= a < n and 0 <= b < n) or a == b:
            raise GraphError(f"edge ({a}, {b}) references unknown nodes")
        if kind == ODOMETRY and abs(a - b) != 1:
            raise GraphError("odometry edges must connect consecutive nodes")
        if kind not in (ODOMETRY, LOOP_CLOSURE):
            raise GraphError(f"unknown edge type {kind!r}")
        self.edges.append((kind, int(a), int(b)))

    def lidar_pose(self, k: int) -> np.ndarray:
        return self.poses[k] @ self.extrinsic

    def lidar_positions(self) -> np.ndarray:
        if not self.poses:
            return np.empty((0, 3))
        P = np.array(self.poses)
        return (P[:, :3, :3] @ self.extrinsic[:3, 3] + P[:, :3, 3])

    def loop_edges(self) -> list[tuple[int, int]]:
        return [(a, b) for kind, a, b in self.edges if kind == LOOP_CLOSURE]

    def with_poses(self, poses) -> "PoseGraph":
        if len(poses) != len(self.poses):
            raise GraphError("updated graph must have the same nodes")
        return PoseGraph([np.asarray(p, dtype=np.float64).copy() for p in poses],
                         list(self.edges), self.extrinsic.copy())

    def validate(self) -> None:
        for T in self.poses:
            if not geometry.is_rigid(T):
                raise GraphError("node pose is not a rigid transform")
        if not geometry.is_rigid(self.extrinsic):
            raise GraphError("extrinsic is not a rigid transform")
        for kind, a, b in self.edges:
            n = len(self.poses)
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a}, {b}) references unknown nodes")
            if kind == ODOMETRY and abs(a - b) != 1:
                raise GraphError("odometry edges must connect consecutive nodes")


@dataclass
class RegisteredCloudList:
    """Pose graph with one organised LiDAR-frame cloud per node."""

    graph: PoseGraph
    clouds: list

    def __post_init__(self):
        if len(self.clouds) != len(self.graph):
            raise GraphError(f"{len(self.clouds)} clouds for {len(self.graph)} nodes")


@dataclass
class ClusteringConfig:
    lambda_odom: float = 30.0
    lambda_cluster: float = 15.0
    lambda_update: float = 0.1
    theta_update_deg: float = 2.5

    def __post_init__(self):
        for name in ("lambda_odom", "lambda_cluster", "lambda_update", "theta_update_deg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(eq=False)
class Submap:
    id: int
    tree: Octree
    root_pose: np.ndarray
    root_node: int
    nodes: list = field(default_factory=list)
    scans_integrated: int = 0


def _adjacency(graph: PoseGraph):
    pos = graph.lidar_positions()
    adj: list[list[tuple[int, float]]] = [[] for _ in range(len(graph))]
    for _, a, b in graph.edges:
        w = float(np.linalg.norm(pos[a] - pos[b]))
        adj[a].append((b, w))
        adj[b].append((a, w))
    return adj


def graph_distances(graph: PoseGraph, source: int) -> np.ndarray:
    """Shortest-path length from ``source`` to every node (``inf`` if unreachable).

    Edge cost is the Euclidean distance between the two LiDAR positions.
    """
    n = len(graph)
    if not 0 <= source < n:
        raise GraphError(f"node {source} does not exist")
    adj = _adjacency(graph)
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def graph_distance(graph: PoseGraph, k_from: int, k_to: int) -> float:
    if not 0 <= k_to < len(graph):
        raise GraphError(f"node {k_to} does not exist")
    d = graph_distances(graph, k_from)[k_to]
    if not np.isfinite(d):
        raise GraphError(f"nodes {k_from} and {k_to} are not connected")
    return float(d)


def odometry_chain_lengths(graph: PoseGraph) -> np.ndarray:
    """Cumulative LiDAR path length along the node chain."""
    pos = graph.lidar_positions()
    if len(pos) == 0:
        return np.empty(0)
    step = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(step)])


def _merge_sets(sets: list[set]) -> list[set]:
    merged: list[set] = []
    for s in sets:
        s = set(s)
        keep = []
        for m in merged:
            if m & s:
                s |= m
            else:
                keep.append(m)
        merged = keep + [s]
    return sorted(merged, key=min)


def loop_cluster(graph: PoseGraph, a: int, b: int, lambda_cluster: float) -> set:
    d = np.minimum(graph_distances(graph, a), graph_distances(graph, b))
    return set(np.nonzero(d < lambda_cluster)[0].tolist())


def cluster_graph(graph: PoseGraph, config: ClusteringConfig):
    """Batch clustering: ``(assignment, clusters)``.

    ``assignment[k]`` is the submap index of node ``k`` from walking the
    odometry chain; ``clusters`` are the merged node sets around each loop edge.
    """
    chain = odometry_chain_lengths(graph)
    assignment = np.zeros(len(graph), dtype=np.int64)
    root = 0
    sid = 0
    for k in range(len(graph)):
        if chain[k] - chain[root] > config.lambda_odom:
            root = k
            sid += 1
        assignment[k] = sid
    clusters = [loop_cluster(graph, a, b, config.lambda_cluster) for a, b in graph.loop_edges()]
    return assignment, _merge_sets(clusters)


def relative_lidar_pose(root_pose: np.ndarray, graph: PoseGraph, k: int) -> np.ndarray:
    """Pose of LiDAR ``k`` in a submap frame rooted at ``root_pose``."""
    return geometry.invert(root_pose) @ graph.poses[k] @ graph.extrinsic


def pose_update_check(current: np.ndarray, candidate: np.ndarray, config: ClusteringConfig) -> bool:
    """True if the candidate root pose moved beyond the translation or rotation threshold."""
    dt = float(np.linalg.norm(candidate[:3, 3] - current[:3, 3]))
    dr = geometry.rotation_angle(candidate[:3, :3].T @ current[:3, :3])
    return dt > config.lambda_update or dr > math.radians(config.theta_update_deg)


@dataclass
class PoseUpdateRecord:
    submap_id: int
    root_node: int
    translation_change: float
    rotation_change_deg: float
    applied: bool


class SubmapManager:
    """Online clustering, integration, fusion and pose correction of submaps."""

    def __init__(self, model: SphericalSensorModel, voxel_dim: float = 0.065,
                 pipeline: str = TSDF, config: ClusteringConfig | None = None,
                 tsdf_config: TsdfConfig | None = None,
                 occupancy_config: OccupancyConfig | None = None,
                 submap_size: float = 200.0, fusion: bool = True,
                 extrinsic: np.ndarray | None = None):
        if pipeline not in (TSDF, OCCUPANCY):
            raise ValueError(f"unknown pipeline {pipeline!r}")
        self.model = model
        self.voxel_dim = float(voxel_dim)
        self.pipeline = pipeline
        self.config = config or ClusteringConfig()
        self.tsdf_config = tsdf_config or TsdfConfig()
        self.occupancy_config = occupancy_config or OccupancyConfig()
        self.submap_size = float(submap_size)
        self.fusion = fusion
        self.graph = PoseGraph(extrinsic=np.eye(4) if extrinsic is None
                               else np.asarray(extrinsic, dtype=np.float64))
        self.submaps: dict[int, Submap] = {}
        self.node_submap: dict[int, int] = {}
        self.audit: list[PoseUpdateRecord] = []
        self.fusions: list[tuple[int, int]] = []
        self._next_id = 0
        self._current: Submap | None = None
        self._chain: list[float] = []

    @property
    def live(self) -> list[Submap]:
        return [self.submaps[i] for i in sorted(self.submaps)]

    def _new_submap(self, k: int) -> Submap:
        tree = Octree(self.voxel_dim, self.submap_size, kind=self.pipeline)
        sm = Submap(self._next_id, tree, self.graph.lidar_pose(k), k)
        self.submaps[sm.id] = sm
        self._next_id += 1
        return sm

    def add_node(self, T_map_from_body: np.ndarray, cloud: np.ndarray) -> IntegrationStats:
        """Append a node to the graph, assign it to a submap and integrate its scan."""
        k = self.graph.add_node(T_map_from_body)
        pos = self.graph.lidar_positions()[-1]
        if k == 0:
            self._chain.append(0.0)
        else:
            prev = self.graph.lidar_positions()[-2]
            self._chain.append(self._chain[-1] + float(np.linalg.norm(pos - prev)))
        cur = self._current
        if cur is None or self._chain[k] - self._chain[cur.root_node] > self.config.lambda_odom:
            cur = self._current = self._new_submap(k)
        return self.integrate_node(cur, k, cloud)

    def integrate_node(self, submap: Submap, k: int, cloud: np.ndarray) -> IntegrationStats:
        if k in self.node_submap:
            raise GraphError(f"node {k} was already integrated")
        if not submap.nodes and k == submap.root_node:
            submap.root_pose = self.graph.lidar_pose(k)
        T = relative_lidar_pose(submap.root_pose, self.graph, k)
        depth = cloud_to_depth_image(cloud, self.model)
        if self.pipeline == TSDF:
            stats = integrate_scan_tsdf(submap.tree, depth, T, self.model, self.tsdf_config, k)
        else:
            stats = integrate_scan_occupancy(submap.tree, depth, T, self.model,
                                             self.occupancy_config, k)
        submap.nodes.append(k)
        submap.scans_integrated += 1
        self.node_submap[k] = submap.id
        return stats

    def fuse_submaps(self, target: Submap, source: Submap) -> None:
        """Move ``source`` into ``target`` and destroy it."""
        if target is source or target.id == source.id:
            raise ValueError("cannot fuse a submap with itself")
        if target.id not in self.submaps or source.id not in self.submaps:
            raise ValueError("both submaps must be live")
        T = geometry.invert(target.root_pose) @ source.root_pose
        clamp = (self.occupancy_config.clamp_min, self.occupancy_config.clamp_max)
        fuse_tree_into(target.tree, source.tree, T, self.tsdf_config.w_max, clamp)
        target.nodes.extend(source.nodes)
        target.scans_integrated += source.scans_integrated
        for k in source.nodes:
            self.node_submap[k] = target.id
        del self.submaps[source.id]
        if self._current is source:
            self._current = target
        self.fusions.append((target.id, source.id))

    def add_loop_closure(self, a: int, b: int) -> int:
        """Record a loop edge; fuse the submaps holding its cluster. Returns fusions done."""
        self.graph.add_edge(LOOP_CLOSURE, a, b)
        if not self.fusion:
            return 0
        cluster = loop_cluster(self.graph, a, b, self.config.lambda_cluster)
        ids = sorted({self.node_submap[n] for n in cluster if n in self.node_submap})
        if len(ids) < 2:
            return 0
        target = self.submaps[ids[0]]
        for sid in ids[1:]:
            self.fuse_submaps(target, self.submaps[sid])
        return len(ids) - 1

    def apply_pose_updates(self, poses) -> int:
        """Replace node poses and move submaps whose root changed beyond thresholds."""
        updated = self.graph.with_poses(poses)
        count = 0
        for sm in self.live:
            if sm.root_node >= len(updated):
                raise GraphError(f"root node {sm.root_node} missing from updated graph")
            cand = updated.lidar_pose(sm.root_node)
            dt = float(np.linalg.norm(cand[:3, 3] - sm.root_pose[:3, 3]))
            dr = math.degrees(geometry.rotation_angle(cand[:3, :3].T @ sm.root_pose[:3, :3]))
            move = pose_update_check(sm.root_pose, cand, self.config)
            if move:
                sm.root_pose = cand
                count += 1
            self.audit.append(PoseUpdateRecord(sm.id, sm.root_node, dt, dr, move))
        self.graph = updated
        self._chain = odometry_chain_lengths(updated).tolist()
        return count


def apply_pose_updates(manager: SubmapManager, updated_graph: PoseGraph | list) -> int:
    poses = updated_graph.poses if isinstance(updated_graph, PoseGraph) else updated_graph
    return manager.apply_pose_updates(poses)


def process_stream(rcl: RegisteredCloudList, model: SphericalSensorModel,
                   config: ClusteringConfig | None = None, pipeline: str = TSDF,
                   voxel_dim: float = 0.065, fusion: bool = True, pose_updates: dict | None = None,
                   on_scan=None, **kwargs) -> SubmapManager:
    """Replay a registered cloud list through a :class:`SubmapManager`.

    Loop edges are applied once both endpoints have arrived. ``pose_updates``
    maps a node index to a corrected pose list applied right after that node.
    ``on_scan(k, manager, stats)`` is called after every node.
    """
    mgr = SubmapManager(model, voxel_dim, pipeline, config, fusion=fusion,
                        extrinsic=rcl.graph.extrinsic, **kwargs)
    pending = sorted(rcl.graph.loop_edges(), key=lambda e: max(e))
    pose_updates = pose_updates or {}
    ei = 0
    for k, (T, cloud) in enumerate(zip(rcl.graph.poses, rcl.clouds)):
        stats = mgr.add_node(T, cloud)
        if k in pose_updates:
            mgr.apply_pose_updates(pose_updates[k])
        while ei < len(pending) and max(pending[ei]) <= k:
            a, b = pending[ei]
            mgr.add_loop_closure(a, b)
            ei += 1
        if on_scan is not None:
            on_scan(k, mgr, stats)
    return mgr
