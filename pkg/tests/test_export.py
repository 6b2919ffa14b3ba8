import numpy as np
import pytest
from PIL import Image
from scipy.spatial import cKDTree

from elasticmap import geometry, simulate
from elasticmap import io as eio
from elasticmap.export import export_global, fuse_global, global_vertices
from elasticmap.octree.tree import TSDF, Octree
from elasticmap.sensor import SphericalSensorModel, cloud_to_depth_image
from elasticmap.submaps import Submap
from elasticmap.tsdf import extract_mesh, integrate_scan_tsdf

VOXEL = 0.1
MODEL = SphericalSensorModel.os1_64(width=256, height=32, max_range=4.0)


def sphere_submap(sid, centre, root=None):
    """Submap whose tree frame sees a sphere at ``centre`` (tree coordinates)."""
    scene = simulate.Scene([simulate.Sphere(np.asarray(centre, dtype=float), 1.0)])
    T = geometry.make_transform(None, np.asarray(centre) + [-2.5, 0.0, 0.0])
    tree = Octree(VOXEL, size=25.6, kind=TSDF)
    integrate_scan_tsdf(tree, cloud_to_depth_image(simulate.scan(scene, T, MODEL), MODEL), T, MODEL)
    return Submap(sid, tree, np.eye(4) if root is None else root, sid, [sid], 1)


def assert_same_points(a, b, tol=1e-9):
    """Equal point sets up to ``tol`` (order-free)."""
    assert a.shape == b.shape
    assert np.max(cKDTree(b).query(a)[0]) <= tol
    assert np.max(cKDTree(a).query(b)[0]) <= tol


def test_single_identity_submap_equals_own_mesh():
    sm = sphere_submap(0, (0.0, 0.0, 0.0))
    v_own, _ = extract_mesh(sm.tree)
    v_glob = global_vertices([sm])
    assert len(v_own) > 100
    assert_same_points(v_glob, v_own)


def test_translated_submap_shifts_by_root():
    sm = sphere_submap(0, (0.0, 0.0, 0.0))
    base = global_vertices([sm])
    t = np.array([3.0, -2.0, 0.5])
    moved = sphere_submap(0, (0.0, 0.0, 0.0), geometry.make_transform(None, t))
    assert_same_points(global_vertices([moved]), base + t)


def test_disjoint_union_and_order_invariance():
    a = sphere_submap(0, (-4.0, 0.0, 0.0))
    b = sphere_submap(1, (4.0, 0.0, 0.0))
    va, vb = global_vertices([a]), global_vertices([b])
    union = np.concatenate([va, vb])
    assert_same_points(global_vertices([a, b]), union)
    assert_same_points(global_vertices([b, a]), union)
    # disjoint cells fuse bitwise regardless of order
    ta, tb = fuse_global([a, b]), fuse_global([b, a])
    _, sa = ta.allocated_slots()
    _, sb = tb.allocated_slots()
    np.testing.assert_array_equal(ta.pool.value[sa], tb.pool.value[sb])


@pytest.mark.parametrize("fmt", ["mesh-ply", "cloud-ply"])
def test_export_ply(tmp_path, fmt):
    sm = sphere_submap(0, (0.0, 0.0, 0.0))
    export_global([sm], tmp_path / "out.ply", fmt)
    ply = eio.read_ply(tmp_path / "out.ply")
    assert len(ply.points) > 100
    assert (ply.faces is not None) == (fmt == "mesh-ply")


def test_occupancy_slice_png(tmp_path, box_room_submaps):
    export_global(box_room_submaps, tmp_path / "s.png", "occupancy-slice-png", slice_z=1.5)
    img = np.asarray(Image.open(tmp_path / "s.png"))
    h, w = img.shape
    assert img[h // 2, w // 2] == 255
    assert (img == 0).sum() > 0
    assert set(np.unique(img).tolist()) <= {0, 128, 255}


def test_export_errors(tmp_path, box_room_submaps):
    sm = sphere_submap(0, (0.0, 0.0, 0.0))
    with pytest.raises(OSError):
        export_global([sm], tmp_path / "missing" / "x.ply")
    with pytest.raises(ValueError):
        export_global([], tmp_path / "x.ply")
    with pytest.raises(ValueError):
        export_global([sm], tmp_path / "x.ply", "obj")
    with pytest.raises(ValueError):
        export_global(box_room_submaps, tmp_path / "x.ply", "mesh-ply")
