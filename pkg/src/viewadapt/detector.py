"""World-space sliding windows and the four detection pipelines.

Each candidate window is an object position on the ground plane.  Its
homography ``h_st`` maps training-window pixels to frame pixels, so it plays
the role of ``h`` in :mod:`viewadapt.remap` with the training view as output
and the frame as input.

Pipelines
---------
unadapted         frame features, rectangle resampling only (no viewpoint change)
image-warp        warp every window to the training view, then features (oracle)
classifier-adapt  frame features once, pre-adapted weights per window
feature-remap     frame features once, cached sparse G per window, then score
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .classifier import LinearModel, StumpEnsemble
from .errors import EmptyWindowSet, GeometryError, MissingCacheEntry, NonPositiveInput
from .features import CellGrid, channel_planes, channel_sums_from_planes, compute_features, hog_from_gradients
from .geometry import (
    WINDOW_SIZE,
    CameraPose,
    Homography,
    ObjectPlaneSpec,
    camera_for_pose,
    crop_homography,
    object_plane_homography,
)
from .imaging import as_image, compute_gradients, warp_window
from .remap import (
    RemapCache,
    build_feature_remap,
    cell_overlap_matrix,
    density_compensation,
    feature_remap,
    remap_key,
)

PIPELINES = ("unadapted", "image-warp", "classifier-adapt", "feature-remap")
_CORNERS = np.array([[0.0, 0.0], [WINDOW_SIZE[0], 0.0], [WINDOW_SIZE[0], WINDOW_SIZE[1]], [0.0, WINDOW_SIZE[1]]])


def world_stride(pixel_stride: float, object_height_m: float = 1.75, object_height_px: float = 96.0) -> float:
    """Pixel stride in the training window expressed as meters on the object."""
    if not (pixel_stride > 0 and object_height_m > 0 and object_height_px > 0):
        raise NonPositiveInput("stride and object heights must be positive")
    return pixel_stride * object_height_m / object_height_px


@dataclass(frozen=True, eq=False)
class Window:
    world_position: tuple[float, float]
    image_rect: tuple[float, float, float, float]   # x, y, w, h
    h_st: Homography                                 # training-window px -> frame px
    in_grid: CellGrid                                # frame cells under the window
    remap_key: str = ""


@dataclass
class WindowSet:
    entries: list[Window]
    pose: CameraPose
    train_pose: CameraPose
    frame_grid: CellGrid

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def rects(self) -> np.ndarray:
        return np.array([w.image_rect for w in self.entries], dtype=np.float64).reshape(-1, 4)


def _rect_of(h: Homography) -> tuple[float, float, float, float]:
    c = h.apply(_CORNERS)
    lo, hi = c.min(axis=0), c.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))


def _cell_region(rect, frame_grid: CellGrid) -> CellGrid | None:
    """Cell-aligned frame grid covering ``rect``, clipped to the frame."""
    s = frame_grid.cell_size
    x, y, w, h = rect
    c0 = max(int(math.floor(x / s)), 0)
    r0 = max(int(math.floor(y / s)), 0)
    c1 = min(int(math.ceil((x + w) / s)), frame_grid.cols)
    r1 = min(int(math.ceil((y + h) / s)), frame_grid.rows)
    if c1 <= c0 or r1 <= r0:
        return None
    return CellGrid(c1 - c0, r1 - r0, s, (c0 * s, r0 * s))


def generate_windows(pose: CameraPose, ground_extent, stride_m: float, obj: ObjectPlaneSpec | None = None,
                     train_pose: CameraPose | None = None, cell_size: int = 8, min_separation: float = 1.0,
                     kind: str = "hog", bins: int = 9, mode: str = "per-cell", compensate: bool = True) -> WindowSet:
    """Candidate windows on a ground lattice, thinned to ``min_separation`` px.

    ``ground_extent`` is (x0, y0, x1, y1) in meters.  Positions are visited
    near-to-far and a window is dropped when all four rect coordinates lie
    within ``min_separation`` of an already accepted window.  ``kind``,
    ``bins``, ``mode`` and ``compensate`` only enter the remap cache keys.
    """
    if not stride_m > 0:
        raise NonPositiveInput(f"stride must be positive, got {stride_m!r}")
    x0, y0, x1, y1 = (float(v) for v in ground_extent)
    if not (x1 >= x0 and y1 >= y0):
        raise ValueError(f"empty ground extent {ground_extent!r}")
    obj = obj or ObjectPlaneSpec()
    train_pose = train_pose or CameraPose(0.0)
    cam = camera_for_pose(pose, obj)
    W, H = pose.image_size
    frame_grid = CellGrid(W // cell_size, H // cell_size, cell_size)
    to_train = crop_homography(train_pose, obj).inverse()

    xs = x0 + stride_m * np.arange(int(math.floor((x1 - x0) / stride_m + 1e-9)) + 1)
    ys = y0 + stride_m * np.arange(int(math.floor((y1 - y0) / stride_m + 1e-9)) + 1)
    px, py = np.meshgrid(xs, ys)
    pts = np.column_stack([px.ravel(), py.ravel()])
    dist = np.hypot(pts[:, 0] - cam.center[0], pts[:, 1] - cam.center[1])
    order = np.lexsort((pts[:, 0], dist))

    accepted: list[Window] = []
    buckets: dict[tuple[int, int], list[np.ndarray]] = {}
    for i in order:
        x, y = float(pts[i, 0]), float(pts[i, 1])
        try:
            h_img = object_plane_homography(cam, (x, y, 0.0))
            h = h_img @ to_train
            # the window must sit in front of the camera
            cam.project([[x, y, 0.0], [x, y, obj.height]])
        except GeometryError:
            continue
        rect = _rect_of(h)
        rx, ry, rw, rh = rect
        if rw <= 0 or rh <= 0 or rx + rw <= 0 or ry + rh <= 0 or rx >= W or ry >= H:
            continue
        corners = np.array([rx, ry, rx + rw, ry + rh])
        bx, by = int(math.floor(rx)), int(math.floor(ry))
        close = False
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for other in buckets.get((bx + dx, by + dy), ()):
                    if np.max(np.abs(other - corners)) < min_separation:
                        close = True
                        break
        if close:
            continue
        grid = _cell_region(rect, frame_grid)
        if grid is None:
            continue
        out_grid = CellGrid.for_window(cell_size=cell_size)
        key = remap_key(h, out_grid, grid, bins if kind == "hog" else None, mode, kind, compensate)
        buckets.setdefault((bx, by), []).append(corners)
        accepted.append(Window((x, y), rect, h, grid, key))
    if not accepted:
        raise EmptyWindowSet("no ground position projects into the frame")
    return WindowSet(accepted, pose, train_pose, frame_grid)


# --------------------------------------------------------------------------
# detections

@dataclass(frozen=True)
class Detection:
    image_rect: tuple[float, float, float, float]
    world_position: tuple[float, float]
    score: float
    pipeline: str
    window: int = -1

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite detection score {self.score!r}")


def iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def non_max_suppress(detections, iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy NMS; ties in score keep the lower window index first."""
    dets = sorted(detections, key=lambda d: (-d.score, d.window))
    kept: list[Detection] = []
    for d in dets:
        if all(iou(d.image_rect, k.image_rect) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def _to_detections(windows: WindowSet, scores, pipeline: str, threshold: float | None) -> list[Detection]:
    out = []
    for i, (w, s) in enumerate(zip(windows, scores)):
        if threshold is None or s > threshold:
            out.append(Detection(w.image_rect, w.world_position, float(s), pipeline, i))
    return out


# --------------------------------------------------------------------------
# frame features

@dataclass
class FrameFeatures:
    """Per-cell features of a whole frame, cells laid out (rows, cols, D)."""

    cells: np.ndarray
    grid: CellGrid
    kind: str

    def window(self, g: CellGrid) -> np.ndarray:
        """Flat features of the sub-grid ``g`` in that grid's own layout."""
        s = self.grid.cell_size
        c0, r0 = g.origin[0] // s, g.origin[1] // s
        block = self.cells[r0:r0 + g.rows, c0:c0 + g.cols]
        if self.kind == "hog":
            return block.ravel()
        return np.transpose(block, (2, 0, 1)).ravel()

    def flat_index(self, g: CellGrid) -> np.ndarray:
        """Indices into ``cells.ravel()`` that produce :meth:`window` for ``g``."""
        s = self.grid.cell_size
        c0, r0 = g.origin[0] // s, g.origin[1] // s
        idx = np.arange(self.cells.size).reshape(self.cells.shape)[r0:r0 + g.rows, c0:c0 + g.cols]
        if self.kind == "hog":
            return idx.ravel()
        return np.transpose(idx, (2, 0, 1)).ravel()


def frame_features(img, grid: CellGrid, kind: str = "hog", bins: int = 9) -> FrameFeatures:
    img = as_image(img)
    if kind == "hog":
        cells = hog_from_gradients(compute_gradients(img), grid, bins)
    elif kind == "channels":
        cells = np.transpose(channel_sums_from_planes(channel_planes(img), grid), (1, 2, 0))
    else:
        raise ValueError(f"unknown feature kind {kind!r}")
    return FrameFeatures(cells, grid, kind)


# --------------------------------------------------------------------------
# remap banks

def _window_remap(w: Window, model, mode: str, adapt: bool, compensate: bool = True):
    """G mapping frame features under ``w`` to training-window features."""
    out_grid = model.grid
    kind = model.feature_kind
    if adapt:
        h = w.h_st
    else:
        x, y, rw, rh = w.image_rect
        h = Homography.from_matrix([[rw / WINDOW_SIZE[0], 0, x], [0, rh / WINDOW_SIZE[1], y], [0, 0, 1]])
    if adapt:
        return sp.csr_matrix(feature_remap(h, out_grid, w.in_grid, model.bins, mode, kind, compensate).G)
    S, _ = cell_overlap_matrix(out_grid, h, w.in_grid)
    if kind == "channels":
        G = build_feature_remap(S, None, channels=2, dense_limit=0)
    else:
        G = build_feature_remap(S, np.eye(model.bins), "shared", dense_limit=0)
    if compensate:
        G = sp.diags(density_compensation(out_grid, h, kind, model.bins)) @ G
    return sp.csr_matrix(G)


def build_remap_cache(windows: WindowSet, model, mode: str = "per-cell", cache: RemapCache | None = None,
                      compensate: bool = True) -> RemapCache:
    """Off-line construction of every window's feature map."""
    cache = cache if cache is not None else RemapCache()
    for w in windows:
        if w.remap_key not in cache:
            cache.entries[w.remap_key] = _window_remap(w, model, mode, True, compensate)
    return cache


@dataclass
class WindowBank:
    """Windows stacked into one sparse operator over the flattened frame features.

    ``G`` has one block of rows per window; for linear models ``W`` holds the
    adapted weight vector of each window as one row.
    """

    G: sp.csr_matrix
    W: sp.csr_matrix | None
    dim: int
    n: int


def _stack(windows: WindowSet, model, feats_shape, blocks) -> WindowBank:
    idx_template = FrameFeatures(np.zeros(feats_shape), windows.frame_grid, model.feature_kind)
    rows, cols, vals = [], [], []
    dim = None
    for i, (w, G) in enumerate(zip(windows, blocks)):
        G = sp.coo_matrix(G)
        dim = G.shape[0]
        cols_map = idx_template.flat_index(w.in_grid)
        rows.append(G.row + i * dim)
        cols.append(cols_map[G.col])
        vals.append(G.data)
    n_in = int(np.prod(feats_shape))
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(windows) * dim, n_in))
    W = None
    if isinstance(model, LinearModel):
        # row i of W is (G_i.T w) placed in frame coordinates
        Gb = G.tocoo()
        wv = np.asarray(model.weights)[Gb.row % dim]
        W = sp.csr_matrix((Gb.data * wv, (Gb.row // dim, Gb.col)), shape=(len(windows), n_in))
    return WindowBank(G, W, dim, len(windows))


def _feats_shape(windows: WindowSet, model) -> tuple[int, int, int]:
    g = windows.frame_grid
    d = model.bins if model.feature_kind == "hog" else 2
    return (g.rows, g.cols, d)


def build_window_bank(windows: WindowSet, model, cache: RemapCache | None = None, mode: str = "per-cell",
                      adapt: bool = True, compensate: bool = True) -> WindowBank:
    """Stack per-window maps.  With ``adapt`` the maps come from ``cache``."""
    blocks = []
    for w in windows:
        if adapt and cache is not None:
            blocks.append(cache.get(w.remap_key))
        else:
            blocks.append(_window_remap(w, model, mode, adapt, compensate))
    return _stack(windows, model, _feats_shape(windows, model), blocks)


# --------------------------------------------------------------------------
# pipelines

@dataclass
class PixelWork:
    pixels: int = 0
    windows: int = 0


@dataclass
class DetectorRun:
    scores: np.ndarray
    work: PixelWork = field(default_factory=PixelWork)


def score_windows_warp(img, model, windows: WindowSet) -> DetectorRun:
    """Algorithm 1: warp each window to the training view and compute features there."""
    img = as_image(img)
    scores = np.empty(len(windows))
    for i, w in enumerate(windows):
        crop = warp_window(img, w.h_st, WINDOW_SIZE)
        scores[i] = model.score(compute_features(crop, model.feature_kind, model.grid, model.bins))
    n = len(windows)
    return DetectorRun(scores, PixelWork(n * WINDOW_SIZE[0] * WINDOW_SIZE[1], n))


def score_windows_bank(img, model, windows: WindowSet, bank: WindowBank, use_weights: bool) -> DetectorRun:
    """Frame features once, then the stacked per-window operator."""
    img = as_image(img)
    feats = frame_features(img, windows.frame_grid, model.feature_kind, model.bins)
    f = feats.cells.ravel()
    if use_weights and bank.W is not None:
        scores = np.asarray(bank.W @ f).ravel() + model.bias
    else:
        x = np.asarray(bank.G @ f).reshape(bank.n, bank.dim)
        scores = np.asarray(model.score(x)).ravel()
    return DetectorRun(scores, PixelWork(img.shape[0] * img.shape[1], len(windows)))


def detect_warp_baseline(img, model, windows: WindowSet, threshold: float | None = None) -> list[Detection]:
    run = score_windows_warp(img, model, windows)
    return _to_detections(windows, run.scores, "image-warp", threshold)


def detect_adapted(img, model, windows: WindowSet, bank: WindowBank | None = None,
                   cache: RemapCache | None = None, pipeline: str = "classifier-adapt",
                   mode: str = "per-cell", threshold: float | None = None) -> list[Detection]:
    """Algorithm 2.  Raises MissingCacheEntry when a window's map is not cached."""
    if bank is None:
        if cache is None:
            raise MissingCacheEntry("detect_adapted needs a window bank or a remap cache")
        bank = build_window_bank(windows, model, cache, mode)
    use_w = pipeline == "classifier-adapt"
    if use_w and isinstance(model, StumpEnsemble):
        raise ValueError("classifier adaptation needs a linear model; use feature-remap for stumps")
    run = score_windows_bank(img, model, windows, bank, use_w)
    return _to_detections(windows, run.scores, pipeline, threshold)


def detect_unadapted(img, model, windows: WindowSet, bank: WindowBank | None = None,
                     threshold: float | None = None) -> list[Detection]:
    bank = bank or build_window_bank(windows, model, adapt=False)
    run = score_windows_bank(img, model, windows, bank, isinstance(model, LinearModel))
    return _to_detections(windows, run.scores, "unadapted", threshold)


class Detector:
    """Bundles a model, a window set and the precomputed banks for each pipeline."""

    def __init__(self, model, windows: WindowSet, mode: str = "per-cell", cache: RemapCache | None = None,
                 compensate: bool = True):
        self.model = model
        self.windows = windows
        self.mode = mode
        self.compensate = compensate
        self.cache = cache if cache is not None else build_remap_cache(windows, model, mode, compensate=compensate)
        self._banks: dict[bool, WindowBank] = {}

    def prepare(self, pipelines=PIPELINES) -> "Detector":
        """Build the stacked operators up front so that timing excludes them."""
        for p in pipelines:
            if p in ("classifier-adapt", "feature-remap"):
                self.bank(True)
            elif p == "unadapted":
                self.bank(False)
        return self

    def bank(self, adapt: bool) -> WindowBank:
        if adapt not in self._banks:
            self._banks[adapt] = build_window_bank(self.windows, self.model, self.cache if adapt else None,
                                                   self.mode, adapt, self.compensate)
        return self._banks[adapt]

    def run(self, img, pipeline: str) -> DetectorRun:
        if pipeline == "image-warp":
            return score_windows_warp(img, self.model, self.windows)
        if pipeline == "unadapted":
            return score_windows_bank(img, self.model, self.windows, self.bank(False),
                                      isinstance(self.model, LinearModel))
        if pipeline == "classifier-adapt":
            if not isinstance(self.model, LinearModel):
                raise ValueError("classifier adaptation needs a linear model")
            return score_windows_bank(img, self.model, self.windows, self.bank(True), True)
        if pipeline == "feature-remap":
            return score_windows_bank(img, self.model, self.windows, self.bank(True), False)
        raise ValueError(f"unknown pipeline {pipeline!r}; expected one of {PIPELINES}")

    def detect(self, img, pipeline: str, threshold: float | None = None, nms: float | None = 0.5) -> list[Detection]:
        dets = _to_detections(self.windows, self.run(img, pipeline).scores, pipeline, threshold)
        return non_max_suppress(dets, nms) if nms is not None else dets


def calibrate_threshold(frame_scores, windows: WindowSet, fppi: float = 1.0, nms: float = 0.5) -> float:
    """Smallest threshold giving at most ``fppi`` detections per background frame after NMS."""
    tops = []
    for scores in frame_scores:
        dets = non_max_suppress(_to_detections(windows, scores, "calibration", None), nms)
        tops.extend(d.score for d in dets)
    allowed = int(math.floor(fppi * len(frame_scores)))
    tops = np.sort(np.asarray(tops))[::-1]
    if allowed >= len(tops):
        return -math.inf
    return float(tops[allowed])


# --------------------------------------------------------------------------
# CSV

DETECTION_FIELDS = ["frame", "pipeline", "x", "y", "w", "h", "world_x", "world_y", "score"]


def write_detections_csv(path, rows) -> None:
    """``rows`` is an iterable of (frame id, Detection)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DETECTION_FIELDS)
        for frame, d in rows:
            writer.writerow([frame, d.pipeline, *(repr(float(v)) for v in d.image_rect),
                             repr(float(d.world_position[0])), repr(float(d.world_position[1])), repr(float(d.score))])


def read_detections_csv(path) -> list[tuple[str, Detection]]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rect = tuple(float(rec[k]) for k in ("x", "y", "w", "h"))
            out.append((rec["frame"], Detection(rect, (float(rec["world_x"]), float(rec["world_y"])),
                                                float(rec["score"]), rec["pipeline"])))
    return out

