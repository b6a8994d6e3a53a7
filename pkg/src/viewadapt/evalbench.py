"""Miss-rate curves, cross-view crop experiments, elevation sweeps and timing."""
from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import LinearModel, adapt_linear, train_linear
from .detector import PIPELINES, Detector, iou
from .errors import EmptyCurve, GeometryError
from .features import CellGrid, compute_features
from .geometry import CameraPose, crop_homography, relative_homography
from .remap import feature_remap


# --------------------------------------------------------------------------
# matching and curves

@dataclass
class Matches:
    """Scored detections flagged true/false positive, plus the truth count."""

    scores: np.ndarray
    is_tp: np.ndarray
    n_truth: int
    assignment: list = field(default_factory=list)   # truth index per detection, -1 if fp

    @property
    def tp(self) -> int:
        return int(self.is_tp.sum())

    @property
    def fp(self) -> int:
        return int((~self.is_tp).sum())

    @property
    def fn(self) -> int:
        return self.n_truth - self.tp

    @classmethod
    def concat(cls, parts) -> "Matches":
        parts = list(parts)
        if not parts:
            return cls(np.zeros(0), np.zeros(0, dtype=bool), 0)
        return cls(np.concatenate([p.scores for p in parts]), np.concatenate([p.is_tp for p in parts]),
                   sum(p.n_truth for p in parts), [a for p in parts for a in p.assignment])


def match_detections(detections, truths, iou_threshold: float = 0.5) -> Matches:
    """Greedy one-to-one matching by descending score, IoU >= threshold."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    taken = [False] * len(truths)
    scores = np.array([detections[i].score for i in order], dtype=np.float64)
    is_tp = np.zeros(len(order), dtype=bool)
    assignment = []
    for n, i in enumerate(order):
        best, best_j = iou_threshold, -1
        for j, t in enumerate(truths):
            if taken[j]:
                continue
            v = iou(detections[i].image_rect, t)
            if v >= best:
                best, best_j = v, j
        if best_j >= 0:
            taken[best_j] = True
            is_tp[n] = True
        assignment.append(best_j)
    return Matches(scores, is_tp, len(truths), assignment)


def crop_matches(scores, labels) -> Matches:
    """Each crop is one window; positive crops are their own truths."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    return Matches(scores, pos.copy(), int(pos.sum()), [i if p else -1 for i, p in enumerate(pos)])


@dataclass
class EvalCurve:
    points: np.ndarray      # (N, 2): fp rate strictly increasing, miss rate
    domain: str = "fppw"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.domain not in ("fppi", "fppw"):
            raise ValueError(f"unknown curve domain {self.domain!r}")

    @property
    def fp(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def miss(self) -> np.ndarray:
        return self.points[:, 1]


def miss_rate_curve(matches: Matches, n_norm: int, domain: str = "fppw") -> EvalCurve:
    """Sweep the threshold over every distinct score.

    ``n_norm`` is the number of images (fppi) or negative windows (fppw).
    Points with equal fp rate are merged keeping the lowest miss rate, so the
    fp axis is strictly increasing and the curve starts at fp = 0.
    """
    if n_norm <= 0:
        raise ValueError("n_norm must be positive")
    if matches.n_truth <= 0:
        raise EmptyCurve("no ground-truth objects to miss")
    order = np.argsort(-matches.scores, kind="stable")
    s = matches.scores[order]
    tp = np.cumsum(matches.is_tp[order])
    fp = np.cumsum(~matches.is_tp[order])
    # only thresholds between distinct scores are realizable
    last = np.ones(len(s), dtype=bool)
    if len(s) > 1:
        last[:-1] = s[1:] != s[:-1]
    fp_rate = np.concatenate([[0.0], fp[last] / n_norm])
    miss = np.concatenate([[1.0], 1.0 - tp[last] / matches.n_truth])
    keep_fp, keep_miss = [], []
    for f, m in zip(fp_rate, miss):
        if keep_fp and f == keep_fp[-1]:
            keep_miss[-1] = min(keep_miss[-1], m)
        else:
            keep_fp.append(f)
            keep_miss.append(m)
    return EvalCurve(np.column_stack([keep_fp, keep_miss]), domain)


def miss_rate_at(curve: EvalCurve, fp: float) -> float:
    """Stepwise-constant lookup: miss rate at the largest curve fp <= ``fp``.

    Below the curve's support the first point is used.
    """
    if len(curve.points) == 0:
        raise EmptyCurve("curve has no points")
    i = int(np.searchsorted(curve.fp, fp, side="right")) - 1
    return float(curve.miss[max(i, 0)])


def log_average_miss_rate(curve: EvalCurve, lo: float = 1e-2, hi: float = 1.0, n_points: int = 9,
                          geometric: bool = False) -> float:
    """Mean miss rate at ``n_points`` log-spaced fp values in [lo, hi].

    ``geometric`` switches to the geometric mean (miss rates floored at 1e-10).
    """
    if not (0 < lo < hi):
        raise ValueError(f"need 0 < lo < hi, got {lo}, {hi}")
    if len(curve.points) == 0:
        raise EmptyCurve("curve has no points")
    refs = np.logspace(math.log10(lo), math.log10(hi), n_points)
    vals = np.array([miss_rate_at(curve, r) for r in refs])
    if geometric:
        return float(np.exp(np.mean(np.log(np.maximum(vals, 1e-10)))))
    return float(vals.mean())


def write_curve_csv(path, curve: EvalCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([curve.domain, "miss_rate"])
        for f, m in curve.points:
            writer.writerow([repr(float(f)), repr(float(m))])


def read_curve_csv(path) -> EvalCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyCurve(f"{path}: empty curve file")
    domain = rows[0][0]
    pts = [(float(a), float(b)) for a, b in rows[1:]]
    return EvalCurve(np.array(pts).reshape(-1, 2), domain)


# --------------------------------------------------------------------------
# crop experiments

def crop_feature_matrix(ds, kind: str = "hog", grid: CellGrid | None = None, bins: int = 9) -> np.ndarray:
    grid = grid or CellGrid.for_window()
    return np.array([compute_features(ds.image(i), kind, grid, bins) for i in range(len(ds.entries))])


def elevation_remap(source_elevation: float, target_elevation: float, grid: CellGrid | None = None,
                    bins: int = 9, mode: str = "per-cell", kind: str = "hog", distance: float = 6.0):
    """G taking target-view crop features to the source (training) view."""
    grid = grid or CellGrid.for_window()
    h = relative_homography(crop_homography(CameraPose(target_elevation, distance)),
                            crop_homography(CameraPose(source_elevation, distance)))
    return feature_remap(h, grid, grid, bins, mode, kind).G


def train_fold_models(ds, X, elevation: float, lam: float = 1e-4, epochs: int = 50, seed: int = 0) -> list:
    """One linear model per fold, trained on that fold's training partition."""
    models = []
    for fold in range(ds.config.folds):
        train, _ = ds.fold_split(fold, elevation, elevation)
        models.append(train_linear(X[train], ds.labels(train), lam=lam, epochs=epochs, seed=seed + fold,
                                   training_view=CameraPose(elevation, ds.config.distance)))
    return models


def fold_curves(ds, X, models, G, target_elevation: float) -> list[EvalCurve]:
    """fppw curve per fold for models (adapted by G unless G is None) on target crops."""
    curves = []
    for fold, model in enumerate(models):
        _, test = ds.fold_split(fold, target_elevation, target_elevation)
        m = model if G is None else adapt_linear(model, G)
        y = ds.labels(test)
        curves.append(miss_rate_curve(crop_matches(m.score(X[test]), y), int((y < 0).sum()), "fppw"))
    return curves


@dataclass
class CrossViewResult:
    source: float
    target: float
    lamr_unadapted: float
    lamr_adapted: float
    curves_unadapted: list
    curves_adapted: list

    @property
    def gain(self) -> float:
        return self.lamr_unadapted - self.lamr_adapted


def cross_view_experiment(ds, X, source_elevation: float, target_elevation: float, mode: str = "per-cell",
                          lam: float = 1e-4, epochs: int = 50, seed: int = 0,
                          lamr_range=(1e-2, 1.0)) -> CrossViewResult:
    models = train_fold_models(ds, X, source_elevation, lam, epochs, seed)
    G = elevation_remap(source_elevation, target_elevation, mode=mode, distance=ds.config.distance)
    un = fold_curves(ds, X, models, None, target_elevation)
    ad = fold_curves(ds, X, models, G, target_elevation)
    lo, hi = lamr_range
    return CrossViewResult(source_elevation, target_elevation,
                           float(np.mean([log_average_miss_rate(c, lo, hi) for c in un])),
                           float(np.mean([log_average_miss_rate(c, lo, hi) for c in ad])), un, ad)


def robustness_sweep(source_models, ds, X, true_elevation: float, adapted_elevations, fppw: float = 1e-2,
                     source_elevation: float = 0.0, mode: str = "per-cell") -> list[tuple[float, float]]:
    """Miss rate at ``fppw`` for the source models adapted to each candidate elevation.

    ``source_models`` is one model per fold (tested on that fold) or a single
    model tested on every fold.  Candidates where the crop geometry is
    undefined (the camera directly overhead) score a miss rate of 1.
    """
    if isinstance(source_models, LinearModel):
        source_models = [source_models] * ds.config.folds
    out = []
    for e in adapted_elevations:
        try:
            G = None if e == source_elevation else elevation_remap(source_elevation, e, mode=mode,
                                                                  distance=ds.config.distance)
        except GeometryError:
            out.append((float(e), 1.0))
            continue
        curves = fold_curves(ds, X, source_models, G, true_elevation)
        out.append((float(e), float(np.mean([miss_rate_at(c, fppw) for c in curves]))))
    return out


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["elevation", "miss_rate"])
        for e, m in rows:
            writer.writerow([repr(float(e)), repr(float(m))])


# --------------------------------------------------------------------------
# benchmark

@dataclass
class PipelineTiming:
    pipeline: str
    fps: float
    fps_spread: tuple[float, float]
    seconds: list[float]
    pixels: int
    windows: int


@dataclass
class BenchReport:
    rows: list[PipelineTiming]
    frames: int
    repetitions: int

    def row(self, pipeline: str) -> PipelineTiming:
        for r in self.rows:
            if r.pipeline == pipeline:
                return r
        raise KeyError(pipeline)


def benchmark(detector: Detector, frames, pipelines=PIPELINES, repetitions: int = 5) -> BenchReport:
    """Median-of-``repetitions`` frames per second for each pipeline.

    Operators are built before timing.  Pixel counts are per frame.
    """
    frames = list(frames)
    if not frames or repetitions < 1:
        raise ValueError("need at least one frame and one repetition")
    detector.prepare(pipelines)
    rows = []
    for p in pipelines:
        detector.run(frames[0], p)  # warm-up
        secs = []
        work = None
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for f in frames:
                work = detector.run(f, p).work
            secs.append(time.perf_counter() - t0)
        fps = [len(frames) / max(s, 1e-12) for s in secs]
        rows.append(PipelineTiming(p, statistics.median(fps), (min(fps), max(fps)), secs, work.pixels, work.windows))
    return BenchReport(rows, len(frames), repetitions)


def format_bench_table(report: BenchReport) -> str:
    out = io.StringIO()
    out.write(f"{'Algorithm':<18}{'fps (median)':>14}{'fps range':>22}{'feature pixels':>16}{'windows':>9}\n")
    for r in report.rows:
        rng = f"{r.fps_spread[0]:.2f}-{r.fps_spread[1]:.2f}"
        out.write(f"{r.pipeline:<18}{r.fps:>14.2f}{rng:>22}{r.pixels:>16d}{r.windows:>9d}\n")
    return out.getvalue()


def write_bench_csv(path, report: BenchReport, include_timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["pipeline", "pixels", "windows"]
        if include_timing:
            head += ["fps_median", "fps_min", "fps_max"]
        writer.writerow(head)
        for r in report.rows:
            row = [r.pipeline, r.pixels, r.windows]
            if include_timing:
                row += [f"{r.fps:.4f}", f"{r.fps_spread[0]:.4f}", f"{r.fps_spread[1]:.4f}"]
            writer.writerow(row)


# --------------------------------------------------------------------------
# plots

def _svg_figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "viewadapt"
    return plt


def plot_curves_svg(curves: dict, path, title: str = "") -> None:
    """Log-log miss rate against fp rate, one line per named curve."""
    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, c in curves.items():
        fp = np.maximum(c.fp, 1e-4)
        ax.step(fp, np.maximum(c.miss, 1e-3), where="post", label=name)
    domain = next(iter(curves.values())).domain if curves else "fppw"
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("false positives per image" if domain == "fppi" else "false positives per window")
    ax.set_ylabel("miss rate")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_sweep_svg(rows, path, true_elevation: float | None = None, baseline: float | None = None) -> None:
    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    e = [r[0] for r in rows]
    m = [r[1] for r in rows]
    ax.plot(e, m, marker="o", label="adapted")
    if baseline is not None:
        ax.axhline(baseline, linestyle="--", color="gray", label="unadapted")
    if true_elevation is not None:
        ax.axvline(true_elevation, linestyle=":", color="k", label="true elevation")
    ax.set_xlabel("adapted elevation (rad)")
    ax.set_ylabel("miss rate at 1e-2 fppw")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
