import numpy as np
import pytest

from elasticmap import geometry, simulate
from elasticmap import io as eio
from elasticmap.replay import (bench, replay, subsample_list, subsample_nodes,
                               synthetic_loop_list)
from elasticmap.sensor import SphericalSensorModel
from elasticmap.submaps import LOOP_CLOSURE, ClusteringConfig, PoseGraph, RegisteredCloudList

SMALL = SphericalSensorModel.os1_64(width=64, height=16, max_range=8.0)


def line_list(n, spacing):
    scene = simulate.corridor(length=n * spacing + 10.0)
    g = PoseGraph()
    clouds = []
    for x in np.arange(n) * spacing:
        T = geometry.make_transform(None, [x, 0.0, 1.5])
        g.add_node(T)
        clouds.append(simulate.scan(scene, T, SMALL))
    return RegisteredCloudList(g, clouds)


def test_subsample_every_fourth():
    g = line_list(17, 0.5).graph
    assert subsample_nodes(g, 2.0).tolist() == [0, 4, 8, 12, 16]
    assert subsample_nodes(g, 0.0).tolist() == list(range(17))
    assert subsample_nodes(PoseGraph(), 2.0).size == 0


def test_subsample_remaps_loop_edges():
    rcl = line_list(9, 0.5)
    rcl.graph.add_edge(LOOP_CLOSURE, 1, 7)
    sub, keep = subsample_list(rcl, 1.0)
    assert keep.tolist() == [0, 2, 4, 6, 8]
    # node 1 maps to kept node 0, node 7 to kept node 6
    assert sub.graph.loop_edges() == [(0, 3)]
    assert len(sub.clouds) == 5


def test_metrics_rows_match_scans(tmp_path):
    rcl = line_list(9, 0.5)
    res = replay(rcl, SMALL, "occupancy", 0.25, subsample=1.0,
                 config=ClusteringConfig(lambda_odom=2.0))
    assert len(res.records) == 5 == sum(sm.scans_integrated for sm in res.manager.live)
    assert [r.node for r in res.records] == [0, 2, 4, 6, 8]
    assert [r.scan_index for r in res.records] == list(range(5))
    assert all(r.integration_ms > 0 and r.allocated_bytes > 0 for r in res.records)
    assert res.records[-1].live_submaps == len(res.manager.live)
    eio.write_metrics_csv(tmp_path / "m.csv", res.records)
    assert len(eio.read_metrics_csv(tmp_path / "m.csv")) == 5


def test_bundle_replay_matches_memory(tmp_path):
    rcl = line_list(6, 1.0)
    eio.save_bundle(tmp_path / "b", rcl, SMALL)
    lazy, model = eio.load_bundle(tmp_path / "b", load_clouds=False)
    a = replay(rcl, SMALL, "tsdf", 0.25).manager
    b = replay(lazy, model, "tsdf", 0.25).manager
    assert [s.nodes for s in a.live] == [s.nodes for s in b.live]
    for sa, sb in zip(a.live, b.live):
        _, xa = sa.tree.allocated_slots()
        _, xb = sb.tree.allocated_slots()
        np.testing.assert_array_equal(sa.tree.pool.value[xa], sb.tree.pool.value[xb])


def test_max_range_override():
    rcl = line_list(2, 1.0)
    res = replay(rcl, SMALL, "occupancy", 0.25, max_range=3.0)
    assert res.manager.model.max_range == 3.0


def test_synthetic_loop_structure():
    rcl, truth, _, _ = synthetic_loop_list(laps=2, radius=8.0, spacing=4.0, model=SMALL)
    n = len(truth)
    per_lap = (n - 1) // 2
    assert rcl.graph.loop_edges()[0] == (0, per_lap)
    assert len(rcl.graph.loop_edges()) == n - per_lap
    drifted, _, _, _ = synthetic_loop_list(laps=1, radius=8.0, spacing=4.0, model=SMALL,
                                           drift_rate=0.01, closures=False)
    assert drifted.graph.loop_edges() == []
    # 1 m of error per 100 m travelled, clouds rendered from the true poses
    truth1 = simulate.circle_trajectory(8.0, 4.0, 1)
    err = drifted.graph.poses[-1][:3, 3] - truth1[-1][:3, 3]
    assert np.linalg.norm(err) == pytest.approx(0.01 * simulate.path_lengths(truth1)[-1])


@pytest.mark.slow
def test_bench_reports_growth():
    out = bench(n_scans=3, voxel_dim=0.2, max_range=20.0, pipeline="occupancy")
    assert len(out["times_s"]) == 3 == len(out["bytes_per_scan"])
    assert out["bytes_per_scan"] == sorted(out["bytes_per_scan"])
    assert out["allocated_bytes"] == out["bytes_per_scan"][-1]
