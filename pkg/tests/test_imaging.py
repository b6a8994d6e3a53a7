import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_warp
from viewadapt.errors import ImageTooSmall, MalformedFile, NonInvertible
from viewadapt.geometry import CameraPose, Homography, view_transfer
from viewadapt.imaging import compute_gradients, load_pgm, quantize, save_pgm, warp_window


def test_load_pgm_scaling(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = load_pgm(p)
    assert img.shape == (2, 2)
    assert np.allclose(img.ravel(), [0, 1.0, 128 / 255, 64 / 255])


def test_load_pgm_tolerates_comments_and_maxval(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n# another\n100\n" + bytes([50, 100]))
    assert np.allclose(load_pgm(p), [[0.5, 1.0]])


@pytest.mark.parametrize("payload", [
    b"P6\n1 1\n255\n\x00",           # wrong magic
    b"P5\n2 2\n255\n\x00\x01",       # truncated
    b"P5\n1 1\n256\n\x00",           # maxval out of range
    b"P5\n1 1\n0\n\x00",
    b"P5\n2",                        # header cut short
])
def test_load_pgm_malformed(tmp_path, payload):
    p = tmp_path / "bad.pgm"
    p.write_bytes(payload)
    with pytest.raises(MalformedFile):
        load_pgm(p)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(0, 1)))
def test_pgm_round_trip(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("pgm") / "r.pgm"
    save_pgm(img, p)
    assert np.array_equal(quantize(load_pgm(p)), quantize(img))
    assert b"#" not in p.read_bytes()[:16]


def test_warp_identity_is_crop():
    rng = np.random.default_rng(0)
    img = rng.random((20, 30))
    out = warp_window(img, Homography.translation(5, 3), (10, 8))
    assert np.array_equal(out, img[3:11, 5:15])


def test_warp_downscale_constant():
    img = np.full((64, 64), 0.3)
    out = warp_window(img, Homography.scaling(2.0), (32, 32))
    assert np.allclose(out[:-1, :-1], 0.3)


def test_warp_out_of_bounds_is_mid_gray():
    out = warp_window(np.zeros((4, 4)), Homography.translation(100, 100), (3, 3))
    assert np.all(out == 0.5)


def test_warp_matches_naive_oracle_on_checkerboard():
    yy, xx = np.mgrid[0:140, 0:80]
    board = (((xx // 8) + (yy // 8)) % 2).astype(np.float64)
    h = view_transfer(CameraPose(math.pi / 8), CameraPose(0.0))
    out = warp_window(board, h, (64, 128))
    ref = naive_warp(board, h.m, 64, 128)
    assert np.max(np.abs(out - ref)) < 1e-6


def test_warp_singular_rejected():
    with pytest.raises(NonInvertible):
        warp_window(np.zeros((4, 4)), Homography.from_matrix(np.zeros((3, 3))), (2, 2))


def test_gradients_constant():
    g = compute_gradients(np.full((6, 7), 0.4))
    assert np.all(g.magnitude == 0) and np.all(g.angle == 0)


def test_gradients_vertical_step():
    img = np.zeros((5, 5))
    img[:, 3:] = 1.0
    g = compute_gradients(img)
    assert np.allclose(g.magnitude[:, 2], 0.5) and np.allclose(g.magnitude[:, 3], 0.5)
    assert np.allclose(g.magnitude[:, :2], 0)
    assert np.all(g.angle[:, 2:4] == 0)


def test_gradients_diagonal_ramp():
    yy, xx = np.mgrid[0:9, 0:9].astype(np.float64)
    g = compute_gradients(0.05 * (xx + yy))
    assert np.max(np.abs(g.angle[1:-1, 1:-1] - math.pi / 4)) < 1e-9


def test_gradients_too_small():
    with pytest.raises(ImageTooSmall):
        compute_gradients(np.zeros((2, 5)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(0, 1)))
def test_gradients_unsigned(img):
    a, b = compute_gradients(img), compute_gradients(1.0 - img)
    assert np.all((a.angle >= 0) & (a.angle < math.pi))
    assert np.allclose(a.magnitude, b.magnitude)
    on = a.magnitude > 1e-9
    d = np.abs(a.angle - b.angle)[on]
    assert np.all(np.minimum(d, math.pi - d) < 1e-9)
