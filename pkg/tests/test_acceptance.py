"""Acceptance criteria 1-9.

Each test records one "Criterion N: PASS/FAIL ..." line; the lines are printed
at the end of the pytest run (see conftest.py) and immediately with ``-s``.
Run standalone with ``python3 tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest

from oracles import raster_overlap
from pipeline import csv_outputs, run_pipeline
from viewadapt.classifier import LinearModel, adapt_linear
from viewadapt.detector import Detector, generate_windows, world_stride
from viewadapt.evalbench import benchmark, cross_view_experiment, crop_feature_matrix, robustness_sweep, \
    train_fold_models
from viewadapt.features import CellGrid, compute_hog
from viewadapt.geometry import CameraPose, Homography, crop_homography, relative_homography, \
    transform_gradient_angle, transform_point, view_transfer
from viewadapt.imaging import warp_window
from viewadapt.remap import angle_bin_matrix, apply_remap, cell_overlap_matrix, feature_remap
from viewadapt.synthdata import DatasetConfig, FrameScene, Renderer, generate_dataset, render_frame

RESULTS: list[str] = []
SEEDS = range(5)


def report(n: int, ok: bool, detail: str, t0: float) -> None:
    line = f"Criterion {n}: {'PASS' if ok else 'FAIL'} - {detail} ({time.perf_counter() - t0:.1f} s)"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line


def test_criterion_1_stride_arithmetic():
    t0 = time.perf_counter()
    stride = world_stride(8, 1.75, 96)
    mpp = world_stride(1, 1.75, 96)
    ok = abs(stride - 0.14583) <= 0.0005 and abs(mpp - 0.018) <= 0.0005
    report(1, ok, f"stride {stride:.5f} m, {mpp:.5f} m/px", t0)


def test_criterion_2_adaptation_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    n = 0
    for dim in (36, 324, 1152):
        for _ in range(334 if dim != 36 else 332):
            G = rng.uniform(-1.0, 1.0, (dim, dim))
            w = rng.uniform(-1.0, 1.0, dim)
            b = float(rng.uniform(-5.0, 5.0))
            x = rng.uniform(-1.0, 1.0, dim)
            m = LinearModel(w, b)
            lhs = float(adapt_linear(m, G).score(x)) - b
            rhs = float(m.score(apply_remap(G, x))) - b
            worst = max(worst, abs(lhs - rhs) / (1 + abs(rhs)))
            n += 1
    report(2, n == 1000 and worst < 1e-9 and time.perf_counter() - t0 < 5,
           f"{n} trials, worst relative error {worst:.2e}", t0)


def test_criterion_3_oracle_equivalence():
    t0 = time.perf_counter()
    ds = generate_dataset(DatasetConfig(instances=2, elevations=(0.0,), negatives_per_scene=10, seed=7))
    grid = CellGrid.for_window()
    src = CameraPose(0.0, 6.0)
    rates = {}
    for e in (math.pi / 8, math.pi / 4):
        # h maps target-view crop pixels into the source crop; G carries source features to the target
        h = relative_homography(crop_homography(src), crop_homography(CameraPose(e, 6.0)))
        G = feature_remap(h, grid, grid, 9, "per-cell").G
        wins = []
        for i in range(len(ds.entries)):
            img = ds.image(i)
            x = compute_hog(img, grid)
            y = compute_hog(warp_window(img, h, (64, 128)), grid)
            wins.append(np.linalg.norm(apply_remap(G, x) - y) < np.linalg.norm(x - y))
        rates[e] = float(np.mean(wins))
    n = len(ds.entries)
    ok = n >= 200 and rates[math.pi / 8] >= 0.95 and rates[math.pi / 4] >= 0.85
    report(3, ok, f"{n} crops, remap closer at pi/8 {rates[math.pi / 8]:.3f}, pi/4 {rates[math.pi / 4]:.3f}", t0)


@pytest.fixture(scope="module")
def seed_data():
    out = []
    for s in SEEDS:
        ds = generate_dataset(DatasetConfig(seed=s, negatives_per_scene=60))
        out.append((ds, crop_feature_matrix(ds, "hog")))
    return out


def test_criterion_4_detection_improvement(seed_data):
    t0 = time.perf_counter()
    far = [cross_view_experiment(ds, X, 0.0, math.pi / 4) for ds, X in seed_data]
    near = [cross_view_experiment(ds, X, math.pi / 8, math.pi / 4) for ds, X in seed_data]
    un = np.mean([r.lamr_unadapted for r in far])
    ad = np.mean([r.lamr_adapted for r in far])
    g_far = np.mean([r.gain for r in far])
    g_near = np.mean([r.gain for r in near])
    ok = ad < un and g_near < g_far
    report(4, ok, f"LAMR-fppw 0->pi/4 unadapted {un:.3f} adapted {ad:.3f}; "
                  f"gain 0->pi/4 {g_far:.3f} > pi/8->pi/4 {g_near:.3f}", t0)


def test_criterion_5_sweep_shape(seed_data):
    t0 = time.perf_counter()
    true = math.pi / 4
    elevations = [k * math.pi / 32 for k in range(17)]
    rows = []
    for ds, X in seed_data:
        models = train_fold_models(ds, X, 0.0)
        rows.append([m for _, m in robustness_sweep(models, ds, X, true, elevations)])
    miss = np.mean(rows, axis=0)
    unadapted = miss[0]
    best = elevations[int(np.argmin(miss))]
    band = [m for e, m in zip(elevations, miss) if abs(e - true) <= 0.15 + 1e-12]
    ok_a = abs(best - true) <= math.pi / 16 + 1e-12
    ok_b = len(band) > 0 and all(m < unadapted for m in band)
    # reported, not gated: first elevation above the truth that no longer beats the unadapted model
    worse = [e for e, m in zip(elevations, miss) if e > true and m >= unadapted]
    over = f"{worse[0] - true:.2f} rad" if worse else "none"
    report(5, ok_a and ok_b, f"argmin {best:.4f} rad (true {true:.4f}); band miss {max(band):.3f} < "
                             f"unadapted {unadapted:.3f}; adapted no better beyond +{over}", t0)


def test_criterion_6_runtime_ratio():
    t0 = time.perf_counter()
    pose = CameraPose(0.5, 10.0, 400.0)
    windows = generate_windows(pose, (-4.5, 0.0, 4.5, 16.0), world_stride(8))
    rng = np.random.default_rng(6)
    model = LinearModel(rng.standard_normal(1152), 0.0, training_view=CameraPose(0.0))
    frame, _ = render_frame(FrameScene(pose, scene_id=0, seed=6), [], Renderer(6))
    rep = benchmark(Detector(model, windows), [frame], repetitions=5)
    warp, adapt = rep.row("image-warp"), rep.row("classifier-adapt")
    fps_ratio = adapt.fps / warp.fps
    px_ratio = warp.pixels / adapt.pixels
    ok = len(windows) >= 5000 and fps_ratio >= 10 and px_ratio >= 50
    report(6, ok, f"{len(windows)} windows, fps classifier-adapt {adapt.fps:.2f} vs image-warp {warp.fps:.3f} "
                  f"({fps_ratio:.0f}x), pixels {warp.pixels} vs {adapt.pixels} ({px_ratio:.0f}x)", t0)


def test_criterion_7_remap_unit_properties():
    t0 = time.perf_counter()
    grid = CellGrid.for_window()
    I = Homography.identity()
    S, _ = cell_overlap_matrix(grid, I)
    A = angle_bin_matrix(I, (32, 64), 9)
    id_err = max(np.abs(S - np.eye(grid.n_cells)).max(), np.abs(A - np.eye(9)).max())
    for mode in ("shared", "per-cell"):
        G = feature_remap(I, grid, grid, 9, mode).G
        G = G.toarray() if hasattr(G, "toarray") else np.asarray(G)
        id_err = max(id_err, np.abs(G - np.eye(1152)).max())

    col_err = 0.0
    rng = np.random.default_rng(7)
    for _ in range(50):
        m = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
        m[2, :2] *= 1e-3
        m[2, 2] = 1
        A = angle_bin_matrix(Homography.from_matrix(m), rng.uniform(0, 64, 2), 9)
        col_err = max(col_err, np.abs(A.sum(axis=0) - 1).max())

    raster_err = 0.0
    for e in (math.pi / 16, math.pi / 8, 3 * math.pi / 16, math.pi / 4):
        h = view_transfer(CameraPose(e), CameraPose(0.0))
        S, _ = cell_overlap_matrix(grid, h)
        R = raster_overlap((grid.cols, grid.rows), 8, h.m, (grid.cols, grid.rows))
        raster_err = max(raster_err, np.abs(S - R).max())

    P = angle_bin_matrix(Homography.rotation(math.pi / 9, (32, 64)), (32, 64), 9)
    perm = (np.array_equal(P, np.round(P)) and np.array_equal(P.sum(0), np.ones(9))
            and np.array_equal(P.sum(1), np.ones(9)) and not np.array_equal(P, np.eye(9)))
    ok = id_err <= 1e-12 and col_err <= 1e-9 and raster_err < 0.02 and perm
    report(7, ok, f"identity err {id_err:.1e}, A column err {col_err:.1e}, raster max diff {raster_err:.4f}, "
                  f"one-bin rotation permutation {perm}", t0)


def _random_homography(rng):
    while True:
        m = np.eye(3) + 0.25 * rng.standard_normal((3, 3))
        m[2, :2] = 0.002 * rng.standard_normal(2)
        m[2, 2] = 1.0
        if abs(np.linalg.det(m)) > 0.1:
            return Homography.from_matrix(m)


def test_criterion_8_angle_transform():
    t0 = time.perf_counter()
    theta = np.arange(180) * math.pi / 180 + 0.001
    ident = np.abs(transform_gradient_angle(Homography.identity(), 5.0, 7.0, theta) - theta).max()
    rot = 0.0
    for phi in (0.3, 1.0, 2.5, -0.7):
        got = transform_gradient_angle(Homography.rotation(phi, (3, 4)), 10.0, -2.0, theta)
        d = np.abs(got - np.mod(theta + phi, math.pi))
        rot = max(rot, np.minimum(d, math.pi - d).max())
    rng = np.random.default_rng(8)
    bij = True
    for _ in range(20):
        h = _random_homography(rng)
        x, y = rng.uniform(0, 64, 2)
        out = transform_gradient_angle(h, x, y, theta)
        steps = np.mod(np.diff(np.append(out, out[0])), math.pi)
        # a bijection of the angle circle winds once, in one direction, with no repeats
        once = math.isclose(steps.sum(), math.pi, abs_tol=1e-6) or math.isclose(
            (math.pi - steps).sum(), math.pi, abs_tol=1e-6)
        # (x, y) is a target-view point of h, so the inverse map's target point is its preimage
        u, v, _ = transform_point(h.inverse(), (x, y))
        back = transform_gradient_angle(h.inverse(), u, v, out)
        d = np.abs(back - theta)
        bij &= once and len(np.unique(np.round(out, 12))) == 180 and np.minimum(d, math.pi - d).max() < 1e-9
    ok = ident < 1e-12 and rot < 1e-9 and bij
    report(8, ok, f"identity err {ident:.1e}, rotation err {rot:.1e}, 20 random maps bijective {bij}", t0)


def test_criterion_9_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    run_pipeline(tmp_path / "a", seed=3)
    run_pipeline(tmp_path / "b", seed=3)
    a, b = csv_outputs(tmp_path / "a"), csv_outputs(tmp_path / "b")
    same = [k for k in a if a[k] == b.get(k)]
    ok = a.keys() == b.keys() and len(same) == len(a) and len(a) >= 10
    report(9, ok, f"{len(same)}/{len(a)} CSV outputs identical across two seeded runs", t0)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
