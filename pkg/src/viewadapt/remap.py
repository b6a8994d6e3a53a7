"""Linear feature-space maps induced by a homography between two views.

Direction convention used throughout this module: ``h`` maps pixel
coordinates of the *output* view into the *input* view.  Output cell k is
projected through ``h`` onto the input cell grid; the matrices built here
map input-view features to output-view features:

    S[k, l] = area(d_l & h(d_k)) / area(d_l)
    A[i, j] = share of input angle bin j that lands in output bin i
    G       = S (x) A      (HOG, shared angle map)

For classifier adaptation the output view is the training view and the input
view is the test view, so ``h`` maps training-window pixels into the test
image and ``G.T @ w`` gives weights that score test-view features directly.
Pass ``h.inverse()`` to go the other way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, MissingCacheEntry
from .features import CellGrid
from .geometry import EPS, Homography, transform_gradient_angle

EPS_AREA = 1e-9
EPS_ARC = 1e-12
DENSE_LIMIT = 512


# --------------------------------------------------------------------------
# polygon primitives

def polygon_area(polygon) -> float:
    """Absolute shoelace area."""
    pts = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))) / 2


def clip_polygon(subject, rect) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of ``subject`` against rect (x0, y0, x1, y1)."""
    x0, y0, x1, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate clip rectangle {rect!r}")
    # (axis, bound, keep values >= bound)
    planes = ((0, x0, True), (0, x1, False), (1, y0, True), (1, y1, False))
    out = [tuple(map(float, p)) for p in subject]
    for axis, bound, keep_ge in planes:
        if not out:
            break
        inp, out = out, []

        def inside(p):
            return p[axis] >= bound if keep_ge else p[axis] <= bound

        s = inp[-1]
        for e in inp:
            if inside(e):
                if not inside(s):
                    out.append(_intersect(s, e, axis, bound))
                out.append(e)
            elif inside(s):
                out.append(_intersect(s, e, axis, bound))
            s = e
    return out


def _intersect(s, e, axis, bound):
    t = (bound - s[axis]) / (e[axis] - s[axis])
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


def _clip_halfplane(P, cnt, axis, bound, keep_ge):
    n, m, _ = P.shape
    idx = np.arange(m)[None, :]
    valid = idx < cnt[:, None]
    nxt = np.where(idx + 1 < cnt[:, None], idx + 1, 0)
    E = np.take_along_axis(P, nxt[..., None], axis=1)
    sv = P[..., axis]
    ev = E[..., axis]
    bound = np.broadcast_to(np.asarray(bound, dtype=np.float64).reshape(-1, 1), sv.shape)
    if keep_ge:
        s_in, e_in = sv >= bound, ev >= bound
    else:
        s_in, e_in = sv <= bound, ev <= bound
    cross = (s_in != e_in) & valid
    denom = np.where(cross, ev - sv, 1.0)
    t = np.where(cross, (bound - sv) / denom, 0.0)
    inter = P + t[..., None] * (E - P)
    cand = np.stack([inter, E], axis=2).reshape(n, 2 * m, 2)
    keep = np.stack([cross, e_in & valid], axis=2).reshape(n, 2 * m)
    order = np.argsort(~keep, axis=1, kind="stable")
    cand = np.take_along_axis(cand, order[..., None], axis=1)
    cnt = keep.sum(axis=1)
    width = max(int(cnt.max(initial=0)), 1)
    return cand[:, :width], cnt


def overlap_areas(quads, rects) -> np.ndarray:
    """Vectorized area(quads[i] & rects[i]) for convex quads, shape (N,)."""
    P = np.asarray(quads, dtype=np.float64)
    R = np.asarray(rects, dtype=np.float64)
    if len(P) == 0:
        return np.zeros(0)
    cnt = np.full(len(P), P.shape[1])
    for axis, col, keep_ge in ((0, 0, True), (0, 2, False), (1, 1, True), (1, 3, False)):
        P, cnt = _clip_halfplane(P, cnt, axis, R[:, col], keep_ge)
    m = P.shape[1]
    idx = np.arange(m)[None, :]
    valid = idx < cnt[:, None]
    nxt = np.where(idx + 1 < cnt[:, None], idx + 1, 0)
    Q = np.take_along_axis(P, nxt[..., None], axis=1)
    cross = P[..., 0] * Q[..., 1] - Q[..., 0] * P[..., 1]
    area = np.abs(np.where(valid, cross, 0.0).sum(axis=1)) / 2
    return np.where(cnt >= 3, area, 0.0)


# --------------------------------------------------------------------------
# spatial and angular resampling

def project_cells(grid: CellGrid, h: Homography) -> tuple[np.ndarray, np.ndarray]:
    """Corners of every cell mapped through ``h``: (K, 4, 2) quads and a
    per-cell flag set when a corner maps to or behind the horizon."""
    r = grid.cell_rects()
    corners = np.stack([
        np.column_stack([r[:, 2], r[:, 1]]),  # NE
        np.column_stack([r[:, 2], r[:, 3]]),  # SE
        np.column_stack([r[:, 0], r[:, 3]]),  # SW
        np.column_stack([r[:, 0], r[:, 1]]),  # NW
    ], axis=1)
    m = h.m
    q = corners @ m[:, :2].T + m[:, 2]
    w = q[..., 2]
    # a cell whose corners straddle w = 0 wraps through infinity
    bad = np.any(np.abs(w) < EPS, axis=1) | (np.sign(w).min(axis=1) != np.sign(w).max(axis=1))
    w = np.where(np.abs(w) < EPS, EPS, w)
    return q[..., :2] / w[..., None], bad


def cell_overlap_matrix(out_grid: CellGrid, h: Homography, in_grid: CellGrid | None = None,
                        eps_area: float = EPS_AREA) -> tuple[np.ndarray, np.ndarray]:
    """Spatial resampling matrix S of shape (out cells, in cells).

    Returns ``(S, degenerate)`` where ``degenerate[k]`` marks output cells
    whose projection is empty or wraps through infinity; their rows are zero.
    Projected cells hanging off the input grid simply collect less mass.
    """
    in_grid = in_grid or out_grid
    quads, bad = project_cells(out_grid, h)
    x, y = quads[..., 0], quads[..., 1]
    area = np.abs((x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y).sum(axis=1)) / 2
    degenerate = bad | (area < eps_area)

    S = np.zeros((out_grid.n_cells, in_grid.n_cells))
    ok = np.flatnonzero(~degenerate)
    if len(ok) == 0:
        return S, degenerate
    s = in_grid.cell_size
    ox, oy = in_grid.origin
    lo = quads[ok].min(axis=1)
    hi = quads[ok].max(axis=1)
    c_lo = np.clip(np.floor((lo[:, 0] - ox) / s), 0, in_grid.cols).astype(np.intp)
    c_hi = np.clip(np.ceil((hi[:, 0] - ox) / s), 0, in_grid.cols).astype(np.intp)
    r_lo = np.clip(np.floor((lo[:, 1] - oy) / s), 0, in_grid.rows).astype(np.intp)
    r_hi = np.clip(np.ceil((hi[:, 1] - oy) / s), 0, in_grid.rows).astype(np.intp)
    nc = c_hi - c_lo
    nr = r_hi - r_lo
    count = np.maximum(nc, 0) * np.maximum(nr, 0)
    if count.sum() == 0:
        return S, degenerate
    k_idx = np.repeat(ok, count)
    offs = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
    nc_rep = np.repeat(nc, count)
    col = np.repeat(c_lo, count) + offs % np.maximum(nc_rep, 1)
    row = np.repeat(r_lo, count) + offs // np.maximum(nc_rep, 1)
    l_idx = row * in_grid.cols + col
    rects = in_grid.cell_rects()
    inter = overlap_areas(quads[k_idx], rects[l_idx])
    S[k_idx, l_idx] = inter / float(s * s)
    return S, degenerate


def density_compensation(out_grid: CellGrid, h: Homography, kind: str = "hog", bins: int = 9) -> np.ndarray:
    """Per-row factors that convert remapped cell sums to output-pixel units.

    S sums input pixels, so a remapped cell carries area(h(d_k)) / area(d_k)
    times the mass the output cell would hold.  Intensity sums are divided by
    that ratio r; gradient magnitudes also scale with the linear zoom, so
    gradient sums are divided by sqrt(r).  Layout follows the feature vector.
    """
    quads, bad = project_cells(out_grid, h)
    x, y = quads[..., 0], quads[..., 1]
    area = np.abs((x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y).sum(axis=1)) / 2
    r = area / float(out_grid.cell_size ** 2)
    ok = ~bad & (r > EPS_AREA)
    safe = np.where(ok, r, 1.0)
    grad = np.where(ok, 1.0 / np.sqrt(safe), 0.0)
    if kind == "hog":
        return np.repeat(grad, bins)
    return np.concatenate([np.where(ok, 1.0 / safe, 0.0), grad])


def _arc_overlap_matrix(start: np.ndarray, width: np.ndarray, bins: int) -> np.ndarray:
    """A[..., i, j]: fraction of arc j (start, width on [0, pi)) inside bin i."""
    edges = np.arange(bins + 1) * (math.pi / bins)
    b_lo = edges[:-1][:, None]
    b_hi = edges[1:][:, None]
    start = start[..., None, :]
    width = width[..., None, :]
    end = start + width
    first = np.clip(np.minimum(np.minimum(end, math.pi), b_hi) - np.maximum(start, b_lo), 0, None)
    wrap_end = np.maximum(end - math.pi, 0.0)
    second = np.clip(np.minimum(wrap_end, b_hi) - b_lo, 0, None)
    overlap = first + np.where(wrap_end > EPS_ARC, second, 0.0)
    # drop slivers and renormalize so each column sums to one
    overlap = np.where(overlap < EPS_ARC, 0.0, overlap)
    total = overlap.sum(axis=-2, keepdims=True)
    tiny = np.broadcast_to(total <= EPS_ARC, overlap.shape)
    home = np.minimum((np.mod(start, math.pi) / (math.pi / bins)).astype(np.intp), bins - 1)
    point_mass = (np.arange(bins)[:, None] == home).astype(np.float64)
    return np.where(tiny, point_mass, overlap / np.where(total > EPS_ARC, total, 1.0))


def angle_bin_matrices(h: Homography, anchors, bins: int) -> np.ndarray:
    """Angle resampling matrices, one (bins, bins) block per output anchor.

    ``h`` maps output coordinates to input coordinates; anchors are output-view
    points.  Returns shape (n_anchors, bins, bins).
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    fwd = h.inverse()  # input -> output
    x = anchors[:, 0:1]
    y = anchors[:, 1:2]
    theta = np.arange(bins) * (math.pi / bins)
    phi = transform_gradient_angle(fwd, x, y, theta[None, :])
    phi = np.broadcast_to(phi, (len(anchors), bins))
    m = fwd.m
    a = m[0, 0] - m[2, 0] * x[:, 0]
    b = m[0, 1] - m[2, 1] * x[:, 0]
    c = m[1, 0] - m[2, 0] * y[:, 0]
    d = m[1, 1] - m[2, 1] * y[:, 0]
    preserving = (a * d - b * c) > 0
    phi_next = np.roll(phi, -1, axis=1)
    fwd_w = np.mod(phi_next - phi, math.pi)
    rev_w = np.mod(phi - phi_next, math.pi)
    start = np.where(preserving[:, None], phi, phi_next)
    width = np.where(preserving[:, None], fwd_w, rev_w)
    return _arc_overlap_matrix(start, width, bins)


def angle_bin_matrix(h: Homography, anchor, bins: int) -> np.ndarray:
    """Single (bins, bins) angle resampling matrix evaluated at ``anchor``."""
    return angle_bin_matrices(h, [anchor], bins)[0]


# --------------------------------------------------------------------------
# combined operator

def build_feature_remap(S: np.ndarray, A: np.ndarray | None = None, mode: str = "shared",
                        channels: int = 1, dense_limit: int = DENSE_LIMIT):
    """Combine spatial and angular resampling into one feature map G.

    shared:   G = S (x) A, A of shape (B, B)
    per-cell: block (k, l) = S[k, l] * A[k], A of shape (K_out, B, B)
    A=None:   channel sums, G = I_channels (x) S

    Small operators (fewer than ``dense_limit`` rows) come back as dense arrays,
    larger ones as CSR matrices.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise DimensionMismatch(f"S must be 2-D, got shape {S.shape}")
    if A is None:
        G = sp.kron(sp.identity(channels, format="csr"), sp.csr_matrix(S), format="csr")
    elif mode == "shared":
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"shared A must be square, got shape {A.shape}")
        G = sp.kron(sp.csr_matrix(S), sp.csr_matrix(A), format="csr")
    elif mode == "per-cell":
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 3 or A.shape[0] != S.shape[0] or A.shape[1] != A.shape[2]:
            raise DimensionMismatch(f"per-cell A must be ({S.shape[0]}, B, B), got shape {A.shape}")
        B = A.shape[1]
        k, l = np.nonzero(S)
        vals = S[k, l][:, None, None] * A[k]
        ii, jj = np.meshgrid(np.arange(B), np.arange(B), indexing="ij")
        rows = (k[:, None, None] * B + ii).ravel()
        cols = (l[:, None, None] * B + jj).ravel()
        G = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(S.shape[0] * B, S.shape[1] * B))
        G.eliminate_zeros()
    else:
        raise ValueError(f"unknown remap mode {mode!r}")
    if G.shape[0] < dense_limit:
        return G.toarray()
    return G


def apply_remap(G, x) -> np.ndarray:
    """G @ x for a single descriptor (D,) or a batch (N, D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != G.shape[1]:
        raise DimensionMismatch(f"feature length {x.shape[-1]} does not match remap input {G.shape[1]}")
    if x.ndim == 1:
        return np.asarray(G @ x).ravel()
    return np.asarray(G @ x.T).T


@dataclass
class RemapMatrices:
    S: np.ndarray
    A: np.ndarray | None
    G: object
    mode: str
    degenerate: np.ndarray
    out_grid: CellGrid
    in_grid: CellGrid
    bins: int | None = None
    kind: str = "hog"


def feature_remap(h: Homography, out_grid: CellGrid, in_grid: CellGrid | None = None,
                  bins: int = 9, mode: str = "shared", kind: str = "hog",
                  compensate: bool = False) -> RemapMatrices:
    """Build S, A and G for one view pair (see the module docstring for direction).

    In shared mode the angle map is evaluated at the output window center; in
    per-cell mode at every output cell center.  ``compensate`` rescales the
    rows of G by :func:`density_compensation`, which matters when windows of
    different image scale are compared against each other.
    """
    in_grid = in_grid or out_grid
    S, degenerate = cell_overlap_matrix(out_grid, h, in_grid)
    if kind == "channels":
        G = build_feature_remap(S, None, channels=2)
        if compensate:
            G = _scale_rows(G, density_compensation(out_grid, h, kind))
        return RemapMatrices(S, None, G, mode, degenerate, out_grid, in_grid, None, kind)
    if mode == "shared":
        x0, y0, x1, y1 = out_grid.extent
        A = angle_bin_matrix(h, ((x0 + x1) / 2, (y0 + y1) / 2), bins)
    elif mode == "per-cell":
        A = angle_bin_matrices(h, out_grid.cell_centers(), bins)
    else:
        raise ValueError(f"unknown remap mode {mode!r}")
    G = build_feature_remap(S, A, mode)
    if compensate:
        G = _scale_rows(G, density_compensation(out_grid, h, kind, bins))
    return RemapMatrices(S, A, G, mode, degenerate, out_grid, in_grid, bins, kind)


def _scale_rows(G, d):
    if sp.issparse(G):
        return sp.csr_matrix(sp.diags(d) @ G)
    return d[:, None] * G


def remap_key(h: Homography, out_grid: CellGrid, in_grid: CellGrid, bins: int | None, mode: str, kind: str,
              compensate: bool = False) -> str:
    def g(grid):
        return f"{grid.cols}x{grid.rows}s{grid.cell_size}@{grid.origin[0]},{grid.origin[1]}"
    tag = "|dc" if compensate else ""
    return f"{kind}|{mode}|{bins}|{g(out_grid)}|{g(in_grid)}|{h.key()}{tag}"


@dataclass
class RemapCache:
    """Feature maps keyed by (grids, bins, mode, homography hash).

    Maps are built off-line and looked up at detection time; ``save``/``load``
    persist them to a single ``.npz`` sidecar.
    """

    entries: dict = field(default_factory=dict)

    def get(self, key: str):
        try:
            return self.entries[key]
        except KeyError:
            raise MissingCacheEntry(f"no remap cached for key {key!r}") from None

    def get_or_build(self, h, out_grid, in_grid=None, bins=9, mode="shared", kind="hog", compensate=False):
        in_grid = in_grid or out_grid
        key = remap_key(h, out_grid, in_grid, bins if kind == "hog" else None, mode, kind, compensate)
        if key not in self.entries:
            self.entries[key] = sp.csr_matrix(feature_remap(h, out_grid, in_grid, bins, mode, kind, compensate).G)
        return key, self.entries[key]

    def __contains__(self, key):
        return key in self.entries

    def __len__(self):
        return len(self.entries)

    def save(self, path) -> None:
        arrays = {}
        keys = sorted(self.entries)
        for i, key in enumerate(keys):
            G = sp.csr_matrix(self.entries[key])
            arrays[f"e{i}_data"] = G.data
            arrays[f"e{i}_indices"] = G.indices
            arrays[f"e{i}_indptr"] = G.indptr
            arrays[f"e{i}_shape"] = np.array(G.shape)
        arrays["keys"] = np.array(keys, dtype=str)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "RemapCache":
        cache = cls()
        with np.load(path, allow_pickle=False) as z:
            for i, key in enumerate(z["keys"]):
                shape = tuple(int(v) for v in z[f"e{i}_shape"])
                cache.entries[str(key)] = sp.csr_matrix(
                    (z[f"e{i}_data"], z[f"e{i}_indices"], z[f"e{i}_indptr"]), shape=shape)
        return cache

