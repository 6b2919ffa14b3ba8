import numpy as np
import pytest

from elasticmap.metrics import cloud_to_cloud_error, resident_mb


def plane(step=0.01, half=1.0):
    g = np.arange(-half, half + step / 2, step)
    x, y = np.meshgrid(g, g)
    return np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])


def test_identical_clouds():
    ref = plane(0.05)
    err = cloud_to_cloud_error(ref, ref)
    assert np.all(err.distances == 0)
    assert np.all(err.fractions == 1.0)


def test_offset_from_dense_plane():
    ref = plane()
    test = plane(0.1, 0.5) + [0.0, 0.0, 0.1]
    err = cloud_to_cloud_error(test, ref)
    np.testing.assert_allclose(err.distances, 0.1, atol=1e-9)
    assert err.fraction_below(0.2) == 1.0 and err.fraction_below(0.05) == 0.0
    assert err.histogram.sum() == len(test)


def test_subsample_of_reference():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=(5000, 3))
    test = ref[rng.choice(len(ref), 300, replace=False)]
    assert np.all(cloud_to_cloud_error(test, ref).distances == 0)


def test_exact_against_brute_force():
    rng = np.random.default_rng(1)
    ref = rng.uniform(-5, 5, size=(800, 3))
    test = rng.uniform(-6, 6, size=(200, 3))
    brute = np.sqrt(((test[:, None, :] - ref[None, :, :]) ** 2).sum(-1)).min(axis=1)
    np.testing.assert_allclose(cloud_to_cloud_error(test, ref).distances, brute, rtol=1e-12)


def test_empty_input():
    with pytest.raises(ValueError):
        cloud_to_cloud_error(np.empty((0, 3)), plane())
    with pytest.raises(ValueError):
        cloud_to_cloud_error(plane(), np.empty((0, 3)))


def test_resident_memory_positive():
    assert resident_mb() > 1.0
