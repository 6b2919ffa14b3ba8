import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elasticmap import geometry, simulate
from elasticmap.sensor import SphericalSensorModel
from elasticmap.submaps import (LOOP_CLOSURE, ClusteringConfig, GraphError, PoseGraph,
                                RegisteredCloudList, SubmapManager, apply_pose_updates,
                                cluster_graph, graph_distance, graph_distances,
                                pose_update_check, process_stream, relative_lidar_pose)

SMALL = SphericalSensorModel.os1_64(width=64, height=16, max_range=8.0)


def chain(points, extrinsic=None):
    g = PoseGraph(extrinsic=np.eye(4) if extrinsic is None else extrinsic)
    for p in points:
        g.add_node(geometry.make_transform(None, p))
    return g


def test_graph_distance_examples():
    g = chain([(0, 0, 0), (3, 0, 0), (3, 4, 0)])
    assert graph_distance(g, 1, 1) == 0.0
    # legs of 3 m and 4 m summed along the chain
    assert graph_distance(g, 0, 2) == 7.0
    g = chain([(0, 0, 0), (3, 0, 0), (6, 4, 0)])
    assert graph_distance(g, 0, 2) == 3.0 + 5.0


def test_disconnected_and_missing_nodes():
    g = PoseGraph()
    g.add_node(np.eye(4))
    g.add_node(np.eye(4), odometry=False)
    with pytest.raises(GraphError):
        graph_distance(g, 0, 1)
    with pytest.raises(GraphError):
        graph_distance(g, 0, 5)


def test_edge_validation():
    g = chain([(0, 0, 0), (1, 0, 0), (2, 0, 0)])
    with pytest.raises(GraphError):
        g.add_edge("odometry", 0, 2)
    with pytest.raises(GraphError):
        g.add_edge("teleport", 0, 1)
    with pytest.raises(GraphError):
        g.add_edge(LOOP_CLOSURE, 0, 9)
    bad = np.eye(4)
    bad[:3, :3] *= 1.1
    with pytest.raises(GraphError):
        g.add_node(bad)


def _floyd(graph):
    """Independent all-pairs shortest paths on the dense matrix."""
    pos = graph.lidar_positions()
    n = len(pos)
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0.0)
    for _, a, b in graph.edges:
        w = np.linalg.norm(pos[a] - pos[b])
        D[a, b] = D[b, a] = min(D[a, b], w)
    for k in range(n):
        D = np.minimum(D, D[:, k:k + 1] + D[k:k + 1, :])
    return D


@pytest.mark.property
@given(st.integers(0, 2 ** 31), st.integers(3, 25), st.integers(0, 4))
def test_shortest_path_matches_oracle_and_loop_shortcuts(seed, n, loops):
    rng = np.random.default_rng(seed)
    g = chain(np.cumsum(rng.normal(size=(n, 3)), axis=0))
    odo = graph_distances(g, 0)
    for _ in range(loops):
        a, b = rng.choice(n, 2, replace=False)
        g.add_edge(LOOP_CLOSURE, int(a), int(b))
    D = _floyd(g)
    for src in (0, n - 1):
        np.testing.assert_allclose(graph_distances(g, src), D[src], rtol=1e-12)
    assert np.all(graph_distances(g, 0) <= odo + 1e-12)


def test_straight_line_clustering():
    g = chain([(x, 0, 0) for x in np.arange(0, 100.1, 2.0)])
    assign, clusters = cluster_graph(g, ClusteringConfig(lambda_odom=30.0))
    # rule: a node joins while its chain distance to the root is <= 30 m
    roots = [int(np.nonzero(assign == s)[0][0]) * 2.0 for s in range(assign.max() + 1)]
    assert roots == [0.0, 32.0, 64.0, 96.0]
    assert clusters == []


def test_cluster_includes_nodes_near_either_endpoint():
    # ten nodes on a U: closure between node 2 and node 7; node 9 is reached via 8
    pts = [(0, 0, 0), (2, 0, 0), (4, 0, 0), (6, 0, 0), (8, 0, 0), (8, 3, 0), (6, 3, 0),
           (4, 3, 0), (2, 3, 0), (0, 3, 0)]
    g = chain(pts)
    g.add_edge(LOOP_CLOSURE, 2, 7)
    _, clusters = cluster_graph(g, ClusteringConfig(lambda_cluster=4.5))
    assert len(clusters) == 1
    c = clusters[0]
    assert {2, 7, 8, 9} <= c
    assert graph_distance(g, 7, 9) < 4.5 and 9 in c
    assert 5 not in c or min(graph_distance(g, 5, 2), graph_distance(g, 5, 7)) < 4.5


def test_overlapping_clusters_merge():
    g = chain([(x, 0, 0) for x in range(0, 40, 2)])
    g.add_edge(LOOP_CLOSURE, 0, 10)
    g.add_edge(LOOP_CLOSURE, 12, 19)
    _, clusters = cluster_graph(g, ClusteringConfig(lambda_cluster=3.0))
    assert len(clusters) == 1


def test_relative_pose_examples_and_matrix_oracle():
    g = chain([(0, 0, 0), (2, 0, 0)])
    root = g.lidar_pose(0)
    np.testing.assert_array_equal(relative_lidar_pose(root, g, 0), np.eye(4))
    np.testing.assert_allclose(relative_lidar_pose(root, g, 1),
                               geometry.make_transform(None, [2, 0, 0]), atol=1e-15)
    rng = np.random.default_rng(3)
    ext = geometry.make_transform(geometry.random_rotation(rng), rng.normal(size=3))
    g = PoseGraph(extrinsic=ext)
    for _ in range(5):
        g.add_node(geometry.make_transform(geometry.random_rotation(rng), rng.normal(size=3) * 10))
    root = rng.normal(size=(4, 4))
    root = geometry.make_transform(geometry.random_rotation(rng), rng.normal(size=3))
    for k in range(5):
        oracle = np.linalg.inv(root) @ g.poses[k] @ ext
        np.testing.assert_allclose(relative_lidar_pose(root, g, k), oracle, atol=1e-12)


def test_pose_update_check_thresholds():
    cfg = ClusteringConfig()
    a = np.eye(4)
    assert pose_update_check(a, geometry.make_transform(None, [0.12, 0, 0]), cfg)
    b = geometry.make_transform(geometry.axis_angle([0, 0, 1], math.radians(1.0)), [0.05, 0, 0])
    assert not pose_update_check(a, b, cfg)
    assert not pose_update_check(a, a.copy(), cfg)
    c = geometry.make_transform(geometry.axis_angle([1, 1, 0], math.radians(3.0)))
    assert pose_update_check(a, c, cfg)


def test_config_must_be_positive():
    with pytest.raises(ValueError):
        ClusteringConfig(lambda_update=0.0)


def _line_list(n, spacing, scene=None, model=SMALL):
    scene = scene or simulate.corridor(length=n * spacing + 20.0)
    g = PoseGraph()
    clouds = []
    for x in np.arange(n) * spacing:
        T = geometry.make_transform(None, [x, 0.0, 1.5])
        g.add_node(T)
        clouds.append(simulate.scan(scene, T, model))
    return RegisteredCloudList(g, clouds)


def test_empty_stream():
    mgr = process_stream(RegisteredCloudList(PoseGraph(), []), SMALL, None, "occupancy", 0.25)
    assert mgr.live == []


def test_stream_without_loops_matches_batch_count():
    rcl = _line_list(16, 2.0)
    cfg = ClusteringConfig(lambda_odom=8.0)
    mgr = process_stream(rcl, SMALL, cfg, "occupancy", 0.25)
    L = 15 * 2.0
    assert len(mgr.live) == math.ceil(L / cfg.lambda_odom)
    assign, _ = cluster_graph(rcl.graph, cfg)
    for sm in mgr.live:
        assert {int(assign[k]) for k in sm.nodes} == {sm.id}


def test_first_node_sets_root_pose():
    rcl = _line_list(6, 2.0)
    mgr = process_stream(rcl, SMALL, ClusteringConfig(lambda_odom=4.0), "tsdf", 0.25)
    for sm in mgr.live:
        np.testing.assert_array_equal(sm.root_pose, rcl.graph.lidar_pose(sm.root_node))
        assert sm.nodes[0] == sm.root_node


def _revisit_list():
    """Out 16 m and back along the same corridor, with loop edges on the way back."""
    xs = list(np.arange(0, 17, 2.0)) + list(np.arange(14, -1, -2.0))
    scene = simulate.corridor(length=40.0)
    g = PoseGraph()
    clouds = []
    for x in xs:
        T = geometry.make_transform(None, [x, 0.0, 1.5])
        g.add_node(T)
        clouds.append(simulate.scan(scene, T, SMALL))
    for k in range(9, len(xs)):
        g.add_edge(LOOP_CLOSURE, int(xs.index(xs[k])), k)
    return RegisteredCloudList(g, clouds)


@pytest.fixture(scope="module")
def revisit():
    rcl = _revisit_list()
    cfg = ClusteringConfig(lambda_odom=6.0, lambda_cluster=3.0)
    fused = process_stream(rcl, SMALL, cfg, "occupancy", 0.25, True)
    plain = process_stream(rcl, SMALL, cfg, "occupancy", 0.25, False)
    return rcl, fused, plain


def test_fusion_reduces_submaps(revisit):
    _, fused, plain = revisit
    assert len(fused.live) < len(plain.live)
    assert fused.fusions
    # the oldest submap of a cluster survives
    for target, source in fused.fusions:
        assert target < source


def test_node_partition(revisit):
    rcl, fused, plain = revisit
    for mgr in (fused, plain):
        seen = [k for sm in mgr.live for k in sm.nodes]
        assert sorted(seen) == list(range(len(rcl.graph)))
        assert sum(sm.scans_integrated for sm in mgr.live) == len(rcl.graph)


def test_fuse_errors(revisit):
    _, fused, _ = revisit
    sm = fused.live[0]
    with pytest.raises(ValueError):
        fused.fuse_submaps(sm, sm)
    with pytest.raises(GraphError):
        fused.integrate_node(sm, sm.nodes[0], np.zeros((16, 64, 3)))


def test_pose_updates_gated():
    rcl = _line_list(12, 2.0)
    mgr = SubmapManager(SMALL, 0.25, "occupancy", ClusteringConfig(lambda_odom=6.0))
    for T, c in zip(rcl.graph.poses, rcl.clouds):
        mgr.add_node(T, c)
    before = {sm.id: sm.root_pose.copy() for sm in mgr.live}
    assert apply_pose_updates(mgr, rcl.graph) == 0
    # sub-threshold jitter
    rng = np.random.default_rng(0)
    jitter = [geometry.make_transform(geometry.axis_angle(rng.normal(size=3), math.radians(1.0)),
                                      P[:3, 3] + rng.uniform(-0.05, 0.05, 3) / math.sqrt(3))
              for P in rcl.graph.poses]
    assert apply_pose_updates(mgr, jitter) == 0
    # move one root node by 1 m
    target = mgr.live[1]
    poses = [P.copy() for P in rcl.graph.poses]
    poses[target.root_node][:3, 3] += [0.0, 1.0, 0.0]
    assert apply_pose_updates(mgr, poses) == 1
    np.testing.assert_array_equal(target.root_pose, poses[target.root_node])
    for sm in mgr.live:
        if sm is not target:
            np.testing.assert_array_equal(sm.root_pose, before[sm.id])
    # every root change is matched by an applied audit record
    assert [r.submap_id for r in mgr.audit if r.applied] == [target.id]
    with pytest.raises(GraphError):
        mgr.apply_pose_updates(poses[:-1])
