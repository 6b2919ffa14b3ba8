import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elasticmap.sensor import (SensorConfigError, SphericalSensorModel, backproject,
                               cloud_to_depth_image, load_sensor_config, ray_directions,
                               save_sensor_config, select_integration_scale,
                               select_integration_scales)

THETA = 9.198e-3
VOXEL = 0.065


def _model(**kw):
    return SphericalSensorModel.os1_64(**kw)


def test_os1_defaults():
    m = _model()
    assert (m.height, m.width) == (64, 1024)
    assert m.vertical_gap == pytest.approx(math.radians(33.2) / 63)
    assert m.horizontal_gap == pytest.approx(2 * math.pi / 1024)
    # integration angle defaults to the sparse (vertical) gap
    assert m.min_ray_angle == pytest.approx(m.vertical_gap)
    assert m.min_adjacent_angle == pytest.approx(m.horizontal_gap)


def test_non_monotonic_elevations_rejected():
    with pytest.raises(SensorConfigError):
        SphericalSensorModel(np.zeros(4), np.array([0.1, 0.2, 0.15]))


def test_point_on_axis():
    m = _model()
    cloud = np.zeros((64, 1024, 3))
    row = int(np.argmin(np.abs(m.elevations)))
    cloud[row, 0] = backproject(row, 0, 5.0, m)
    d = cloud_to_depth_image(cloud, m)
    assert d.ranges[row, 0] == pytest.approx(5.0)
    assert d.valid.sum() == 1


def test_zero_cloud_fully_masked():
    m = _model(width=64)
    d = cloud_to_depth_image(np.zeros((64, 64, 3)), m)
    assert not d.valid.any()


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        cloud_to_depth_image(np.zeros((10, 10, 3)), _model())


def test_nonfinite_and_short_masked_and_long_clipped():
    m = _model(width=8, max_range=10.0)
    cloud = ray_directions(m) * 5.0
    cloud[0, 0] = np.nan
    cloud[1, 1] *= 0.01
    cloud[2, 2] *= 4.0
    d = cloud_to_depth_image(cloud, m)
    assert not d.valid[0, 0] and not d.valid[1, 1]
    assert d.valid[2, 2] and d.clipped[2, 2] and d.ranges[2, 2] == 10.0


def test_backproject_examples():
    m = SphericalSensorModel(np.array([0.0, math.pi / 2]), np.array([0.0]))
    np.testing.assert_allclose(backproject(0, 0, 1.0, m), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(backproject(0, 1, 2.0, m), [0, 2, 0], atol=1e-15)


def test_depth_round_trip_exact():
    m = _model(width=256)
    rng = np.random.default_rng(0)
    r = rng.uniform(1.0, 50.0, size=(m.height, m.width))
    cloud = ray_directions(m) * r[..., None]
    d = cloud_to_depth_image(cloud, m)
    np.testing.assert_allclose(d.ranges, r, rtol=1e-14)
    rows, cols, inside = m.project(cloud.reshape(-1, 3))
    assert inside.all()
    grid_r, grid_c = np.meshgrid(np.arange(m.height), np.arange(m.width), indexing="ij")
    np.testing.assert_array_equal(rows, grid_r.ravel())
    np.testing.assert_array_equal(cols, grid_c.ravel())


@pytest.mark.parametrize("d_r,expected", [(5.0, 0), (15.0, 1), (30.0, 2), (60.0, 3)])
def test_scale_table(d_r, expected):
    assert select_integration_scale(d_r, THETA, VOXEL) == expected


@pytest.mark.property
@given(st.floats(0.01, 500.0), st.floats(0.01, 500.0), st.floats(0.01, 0.5))
def test_scale_monotone_and_capped(a, b, voxel):
    lo, hi = sorted((a, b))
    s_lo = select_integration_scale(lo, THETA, voxel)
    s_hi = select_integration_scale(hi, THETA, voxel)
    assert 0 <= s_lo <= s_hi <= 3
    assert select_integration_scale(hi, THETA, voxel * 2) <= s_hi
    assert select_integration_scales(np.array([lo, hi]), THETA, voxel).tolist() == [s_lo, s_hi]


@pytest.mark.property
@given(st.integers(0, 63), st.integers(0, 1023), st.floats(0.1, 200.0))
def test_backproject_norm(row, col, d):
    m = _model()
    p = backproject(row, col, d, m)
    assert np.linalg.norm(p) == pytest.approx(d, rel=1e-12)
    r, c, inside = m.project(p)
    assert inside[0] and r[0] == row and c[0] == col


def test_config_round_trip(tmp_path):
    m = _model(width=128, max_range=40.0, min_ray_angle=0.01)
    save_sensor_config(m, tmp_path / "s.yaml")
    back = load_sensor_config(tmp_path / "s.yaml")
    np.testing.assert_allclose(back.azimuths, m.azimuths, atol=1e-12)
    np.testing.assert_allclose(back.elevations, m.elevations, atol=1e-12)
    assert back.max_range == 40.0 and back.min_ray_angle == 0.01


def test_nominal_config(tmp_path):
    (tmp_path / "s.yaml").write_text("width: 512\nheight: 32\nvertical_fov_deg: 30\n")
    m = load_sensor_config(tmp_path / "s.yaml")
    assert (m.height, m.width) == (32, 512)
    assert m.vertical_gap == pytest.approx(math.radians(30) / 31)
