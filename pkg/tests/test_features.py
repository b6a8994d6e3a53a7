import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_cell_sums
from viewadapt.errors import GridOutOfBounds
from viewadapt.features import (
    CellGrid, compute_channel_sums, compute_features, compute_hog, feature_dim, read_descriptors_csv,
    write_descriptors_csv,
)
from viewadapt.imaging import compute_gradients


def test_grid_validation():
    with pytest.raises(GridOutOfBounds):
        CellGrid(0, 1)
    with pytest.raises(GridOutOfBounds):
        CellGrid(1, 1, cell_size=1)
    with pytest.raises(GridOutOfBounds):
        compute_hog(np.zeros((16, 16)), CellGrid(3, 2, 8))


def test_hog_constant_is_zero():
    assert np.all(compute_hog(np.full((128, 64), 0.7)) == 0)
    assert len(compute_hog(np.zeros((128, 64)))) == 8 * 16 * 9


def test_hog_vertical_stripes_bin_zero():
    xx = np.mgrid[0:16, 0:16][1]
    img = (xx % 2).astype(np.float64)
    h = compute_hog(img, CellGrid(2, 2, 8), 9).reshape(2, 2, 9)
    # cell (1, 1) is interior on its left and top sides; all of its mass is in bin 0
    assert h[1, 1, 0] > 0 and np.all(h[..., 1:] == 0)


def test_hog_square_two_bins():
    img = np.zeros((64, 64))
    img[16:48, 16:48] = 1.0
    h = compute_hog(img, CellGrid(8, 8, 8), 9).reshape(8, 8, 9)
    per_bin = h.sum(axis=(0, 1))
    # edges vote into bin 0 (angle 0) and bin 4 (angle pi/2); only the four corners leak
    assert (per_bin[0] + per_bin[4]) / per_bin.sum() > 0.95
    assert np.isclose(per_bin[0], per_bin[4])
    # only the cells straddling the square's edges carry mass
    mass = h.sum(axis=2)
    assert mass[0, 0] == 0 and mass[4, 4] == 0 and mass[2, 4] > 0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (32, 24), elements=st.floats(0, 1)))
def test_hog_mass_conservation_and_inversion(img):
    grid = CellGrid(3, 4, 8)
    h = compute_hog(img, grid)
    mag = compute_gradients(img).magnitude
    assert np.isclose(h.sum(), mag.sum(), rtol=1e-9, atol=1e-12)
    assert np.allclose(h, compute_hog(1.0 - img, grid), atol=1e-12)
    assert np.all(h >= 0)


def test_channel_sums_constant_and_impulse():
    s = 8
    c = compute_channel_sums(np.full((32, 16), 0.25), CellGrid(2, 4, s))
    assert np.allclose(c[:8], 0.25 * s * s) and np.allclose(c[8:], 0)
    img = np.zeros((32, 16))
    img[13, 5] = 1.0
    c = compute_channel_sums(img, CellGrid(2, 4, s))
    assert np.count_nonzero(c[:8]) == 1 and c[:8][1 * 2 + 0] == 1.0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (24, 16), elements=st.floats(0, 1)))
def test_channel_sums_match_naive(img):
    grid = CellGrid(2, 3, 8)
    c = compute_channel_sums(img, grid).reshape(2, 3, 2)
    assert np.allclose(c[0], naive_cell_sums(img, 2, 3, 8), atol=1e-9)
    assert np.allclose(c[1], naive_cell_sums(compute_gradients(img).magnitude, 2, 3, 8), atol=1e-9)
    assert np.all(c[0] <= 64 + 1e-9)


def test_feature_dims():
    g = CellGrid.for_window()
    assert feature_dim("hog", g) == 1152 and feature_dim("channels", g) == 256
    assert len(compute_features(np.zeros((128, 64)), "channels", g)) == 256
    with pytest.raises(ValueError):
        compute_features(np.zeros((128, 64)), "luv", g)


def test_soft_voting_conserves_mass():
    rng = np.random.default_rng(3)
    img = rng.random((16, 16))
    g = CellGrid(2, 2, 8)
    assert np.isclose(compute_hog(img, g, soft=True).sum(), compute_hog(img, g).sum())


def test_descriptor_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    X = rng.random((3, 5))
    write_descriptors_csv(tmp_path / "d.csv", ["a", "b", "c"], X)
    ids, Y = read_descriptors_csv(tmp_path / "d.csv")
    assert ids == ["a", "b", "c"] and np.array_equal(X, Y)
