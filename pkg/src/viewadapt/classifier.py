"""Single-view classifiers and their adaptation to a new viewpoint.

Linear models absorb a feature map G into their weights (score(w, G x) ==
score(G.T w, x)); stump ensembles cannot, so they are applied to remapped
features at detection time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateData, DimensionMismatch, MalformedFile
from .features import CellGrid
from .geometry import CameraPose

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    feature_kind: str = "hog"
    training_view: CameraPose | None = None
    grid: CellGrid = field(default_factory=CellGrid.for_window)
    bins: int = 9

    def score(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.weights):
            raise DimensionMismatch(f"feature length {x.shape[-1]} != model dimension {len(self.weights)}")
        return x @ self.weights + self.bias


@dataclass(frozen=True, eq=False)
class StumpEnsemble:
    """Weighted decision stumps: vote = polarity if x[f] > threshold else -polarity."""

    features: np.ndarray
    thresholds: np.ndarray
    polarities: np.ndarray
    alphas: np.ndarray
    dim: int
    feature_kind: str = "channels"
    training_view: CameraPose | None = None
    grid: CellGrid = field(default_factory=CellGrid.for_window)
    bins: int = 9

    def score(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"feature length {x.shape[-1]} != model dimension {self.dim}")
        vals = x[..., self.features]
        votes = np.where(vals > self.thresholds, self.polarities, -self.polarities)
        return votes @ self.alphas


def score(model, x):
    return model.score(x)


def _check_training_data(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DimensionMismatch(f"features {X.shape} and labels {y.shape} disagree")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DegenerateData("labels must be +1 or -1")
    if (y > 0).sum() < 2 or (y < 0).sum() < 2:
        raise DegenerateData("need at least two examples of each class")
    return X, y


def train_linear(X, y, lam: float = 1e-4, epochs: int = 50, seed: int = 0, **meta) -> LinearModel:
    """L2-regularized hinge loss by stochastic subgradient descent (Pegasos).

    Step size 1/(lam t); the bias is an extra constant input of 1.  Returns the
    average of the iterates over the final epoch.  Bitwise reproducible for a
    given seed.
    """
    X, y = _check_training_data(X, y)
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    rng = np.random.default_rng(seed)
    w = np.zeros(d + 1)
    avg = np.zeros(d + 1)
    radius = 1.0 / math.sqrt(lam)
    t = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        last = epoch == epochs - 1
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * (Xb[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += (eta * y[i]) * Xb[i]
            norm = math.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            if last:
                avg += w
    avg /= n
    return LinearModel(avg[:-1].copy(), float(avg[-1]), **meta)


def adapt_linear(model: LinearModel, G, target_view: CameraPose | None = None,
                 grid: CellGrid | None = None) -> LinearModel:
    """Fold a feature map into the weights: w' = G.T @ w, bias unchanged."""
    if G.shape[0] != len(model.weights):
        raise DimensionMismatch(f"remap output {G.shape[0]} != model dimension {len(model.weights)}")
    w = np.asarray(G.T @ model.weights).ravel()
    return replace(model, weights=w, training_view=target_view if target_view is not None else model.training_view,
                   grid=grid or model.grid)


def train_stumps(X, y, rounds: int = 50, seed: int = 0, **meta) -> StumpEnsemble:
    """Discrete AdaBoost over decision stumps.

    Exact best-stump search on sorted feature values.  Ties between equally
    good stumps are broken by a seeded feature permutation, so the result is
    deterministic for a given seed.
    """
    X, y = _check_training_data(X, y)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    n, d = X.shape
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d)
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    w = np.full(n, 1.0 / n)
    feats, thrs, pols, alphas = [], [], [], []
    for _ in range(rounds):
        wy = w[order] * ys
        csum = np.cumsum(wy, axis=0)
        total = csum[-1]
        # split after sorted position i; polarity +1 votes +1 above the split
        err_plus = (1.0 - total + 2 * csum) / 2
        distinct = np.vstack([Xs[1:] > Xs[:-1], np.zeros((1, d), dtype=bool)])
        err_plus = np.where(distinct, err_plus, np.nan)
        err = np.minimum(err_plus, 1.0 - err_plus)
        err = np.where(np.isnan(err), np.inf, err)
        # a split below every value (constant vote)
        const = np.minimum((1.0 - total) / 2, (1.0 + total) / 2)
        best_i = np.argmin(err[:, perm], axis=0)
        best_err = err[best_i, perm]
        j = int(np.argmin(np.minimum(best_err, const[perm])))
        f = int(perm[j])
        if best_err[j] <= const[f]:
            i = best_i[j]
            thr = 0.5 * (Xs[i, f] + Xs[i + 1, f])
            pol = 1.0 if err_plus[i, f] <= 0.5 else -1.0
            e = float(best_err[j])
        else:
            thr = Xs[0, f] - 1.0
            pol = 1.0 if total >= 0 else -1.0
            e = float(const[f])
        e = min(max(e, 1e-10), 1 - 1e-10)
        alpha = 0.5 * math.log((1 - e) / e)
        pred = np.where(X[:, f] > thr, pol, -pol)
        w = w * np.exp(-alpha * y * pred)
        w /= w.sum()
        feats.append(f)
        thrs.append(thr)
        pols.append(pol)
        alphas.append(alpha)
        if e <= 1e-10:
            break
    return StumpEnsemble(np.array(feats, dtype=np.intp), np.array(thrs), np.array(pols), np.array(alphas), d, **meta)


# --------------------------------------------------------------------------
# model files

def _grid_dict(grid: CellGrid) -> dict:
    return {"cols": grid.cols, "rows": grid.rows, "cell_size": grid.cell_size, "origin": list(grid.origin)}


def model_to_dict(model) -> dict:
    common = {
        "format_version": FORMAT_VERSION,
        "feature_kind": model.feature_kind,
        "grid": _grid_dict(model.grid),
        "bins": model.bins,
        "training_view": model.training_view.to_dict() if model.training_view else None,
    }
    if isinstance(model, LinearModel):
        return {"type": "linear", **common, "bias": float(model.bias),
                "weights": [float(v) for v in model.weights]}
    return {"type": "stumps", **common, "dim": model.dim,
            "stumps": [[int(f), float(t), float(p), float(a)] for f, t, p, a in
                       zip(model.features, model.thresholds, model.polarities, model.alphas)]}


def model_from_dict(d: dict):
    if d.get("format_version") != FORMAT_VERSION:
        raise MalformedFile(f"unsupported model format version {d.get('format_version')!r}")
    g = d["grid"]
    meta = dict(
        feature_kind=d["feature_kind"],
        training_view=CameraPose.from_dict(d["training_view"]) if d.get("training_view") else None,
        grid=CellGrid(g["cols"], g["rows"], g["cell_size"], tuple(g["origin"])),
        bins=int(d["bins"]),
    )
    if d["type"] == "linear":
        return LinearModel(np.array(d["weights"], dtype=np.float64), float(d["bias"]), **meta)
    if d["type"] == "stumps":
        st = np.array(d["stumps"], dtype=np.float64).reshape(-1, 4)
        return StumpEnsemble(st[:, 0].astype(np.intp), st[:, 1], st[:, 2], st[:, 3], int(d["dim"]), **meta)
    raise MalformedFile(f"unknown model type {d['type']!r}")


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    try:
        with open(path) as fh:
            return model_from_dict(json.load(fh))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MalformedFile):
            raise
        raise MalformedFile(f"{path}: {exc}") from exc
