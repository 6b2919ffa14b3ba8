import sys
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

import helpers  # noqa: E402

# property tests are derandomised: every run draws the same examples
settings.register_profile("fixed", derandomize=True, deadline=None, max_examples=60,
                          database=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fixed")


def pytest_terminal_summary(terminalreporter):
    if helpers.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in helpers.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def oracle_run():
    """20 scans into scale-0 octrees of both kinds plus the dense oracles."""
    from elasticmap.occupancy import OccupancyConfig, integrate_scan_occupancy
    from elasticmap.octree.tree import OCCUPANCY, TSDF, Octree
    from elasticmap.sensor import cloud_to_depth_image
    from elasticmap.tsdf import TsdfConfig, integrate_scan_tsdf

    model, poses = helpers.oracle_model(), helpers.oracle_poses()
    clouds = helpers.render(helpers.oracle_scene(), poses, model)
    out = {"model": model, "poses": poses, "clouds": clouds}
    for kind, integrate, cfg in ((OCCUPANCY, integrate_scan_occupancy, OccupancyConfig(fixed_scale=0)),
                                 (TSDF, integrate_scan_tsdf, TsdfConfig(fixed_scale=0))):
        tree = Octree(helpers.ORACLE_VOXEL, origin=helpers.ORACLE_ORIGIN, kind=kind,
                      max_depth=helpers.ORACLE_DEPTH)
        t0 = time.perf_counter()
        for k, (cloud, T) in enumerate(zip(clouds, poses)):
            integrate(tree, cloud_to_depth_image(cloud, model), T, model, cfg, k)
        out[kind] = tree
        out[kind + "_seconds"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    out["dense"] = helpers.dense_oracles(clouds, poses, model)
    out["dense_seconds"] = time.perf_counter() - t0
    out["idx"], _ = helpers.dense_centres()
    return out


@pytest.fixture(scope="session")
def box_room_submaps():
    """Occupancy submaps of a scanned 10x10x3 m room (0.1 m voxels)."""
    from elasticmap import geometry, simulate
    from elasticmap.sensor import SphericalSensorModel
    from elasticmap.submaps import PoseGraph, RegisteredCloudList, process_stream

    model = SphericalSensorModel.os1_64(width=512, max_range=20.0)
    scene = simulate.box_room()
    g = PoseGraph()
    clouds = []
    for x in (-3.0, 0.0, 3.0):
        for y in (-3.0, 0.0, 3.0):
            T = geometry.make_transform(None, [x, y, 1.5])
            g.add_node(T)
            clouds.append(simulate.scan(scene, T, model))
    mgr = process_stream(RegisteredCloudList(g, clouds), model, None, "occupancy", 0.1, True)
    return mgr.live
