"""Cell-grid features: HOG-like orientation histograms and Haar-like channel sums.

Descriptors are raw per-cell sums with no block normalization, so every
feature is linear in the per-pixel quantities it accumulates.  Viewpoint
remapping relies on that linearity.

Layouts
-------
HOG: cell-major then bin, index ``(row * cols + col) * bins + b``.
Channel sums: channel-major, index ``ch * K + row * cols + col``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import GridOutOfBounds
from .imaging import GradientField, as_image, compute_gradients

DEFAULT_BINS = 9
DEFAULT_CELL = 8
CHANNELS = ("intensity", "gradient-magnitude")


@dataclass(frozen=True)
class CellGrid:
    cols: int
    rows: int
    cell_size: int = DEFAULT_CELL
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1:
            raise GridOutOfBounds(f"grid needs at least one cell, got {self.cols}x{self.rows}")
        if self.cell_size < 2:
            raise GridOutOfBounds(f"cell_size must be >= 2, got {self.cell_size}")
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @classmethod
    def for_window(cls, width: int = 64, height: int = 128, cell_size: int = DEFAULT_CELL) -> "CellGrid":
        return cls(width // cell_size, height // cell_size, cell_size)

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows

    @property
    def extent(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) pixel bounds covered by the grid."""
        x0, y0 = self.origin
        return x0, y0, x0 + self.cols * self.cell_size, y0 + self.rows * self.cell_size

    def cell_rects(self) -> np.ndarray:
        """(K, 4) array of cell bounds [x0, y0, x1, y1], row-major order."""
        s = self.cell_size
        r, c = np.divmod(np.arange(self.n_cells), self.cols)
        x0 = self.origin[0] + c * s
        y0 = self.origin[1] + r * s
        return np.column_stack([x0, y0, x0 + s, y0 + s]).astype(np.float64)

    def cell_centers(self) -> np.ndarray:
        rects = self.cell_rects()
        return np.column_stack([(rects[:, 0] + rects[:, 2]) / 2, (rects[:, 1] + rects[:, 3]) / 2])

    def check_fits(self, shape: tuple[int, int]) -> None:
        x0, y0, x1, y1 = self.extent
        if x0 < 0 or y0 < 0 or x1 > shape[1] or y1 > shape[0]:
            raise GridOutOfBounds(f"grid extent {self.extent} does not fit image {shape[1]}x{shape[0]}")


def _crop_to_grid(a: np.ndarray, grid: CellGrid) -> np.ndarray:
    x0, y0, x1, y1 = grid.extent
    return a[y0:y1, x0:x1]


def hog_from_gradients(grad: GradientField, grid: CellGrid, bins: int = DEFAULT_BINS,
                       soft: bool = False) -> np.ndarray:
    """Per-cell magnitude-weighted orientation histograms, shape (rows, cols, bins)."""
    if bins < 2:
        raise ValueError("need at least 2 orientation bins")
    grid.check_fits(grad.magnitude.shape)
    mag = _crop_to_grid(grad.magnitude, grid)
    ang = _crop_to_grid(grad.angle, grid)
    s = grid.cell_size
    width = math.pi / bins
    cell = (np.arange(grid.rows)[:, None] * grid.cols + np.arange(grid.cols)[None, :])
    cell = np.repeat(np.repeat(cell, s, axis=0), s, axis=1)
    n = grid.n_cells * bins
    if not soft:
        b = np.minimum((ang / width).astype(np.intp), bins - 1)
        hist = np.bincount((cell * bins + b).ravel(), weights=mag.ravel(), minlength=n)
    else:
        # linear vote between the two nearest bin centers, cyclic over [0, pi)
        pos = ang / width - 0.5
        lo = np.floor(pos)
        frac = pos - lo
        b0 = np.mod(lo, bins).astype(np.intp)
        b1 = np.mod(lo + 1, bins).astype(np.intp)
        hist = np.bincount((cell * bins + b0).ravel(), weights=(mag * (1 - frac)).ravel(), minlength=n)
        hist += np.bincount((cell * bins + b1).ravel(), weights=(mag * frac).ravel(), minlength=n)
    return hist.reshape(grid.rows, grid.cols, bins)


def compute_hog(img, grid: CellGrid | None = None, bins: int = DEFAULT_BINS, soft: bool = False) -> np.ndarray:
    """Flat HOG descriptor of length cols * rows * bins (cell-major, then bin)."""
    img = as_image(img)
    grid = grid or CellGrid.for_window(img.shape[1], img.shape[0])
    grid.check_fits(img.shape)
    return hog_from_gradients(compute_gradients(img), grid, bins, soft).ravel()


def summed_area_table(a: np.ndarray) -> np.ndarray:
    """Integral image with a zero first row and column."""
    sat = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=sat[1:, 1:])
    return sat


def _cell_sums(sat: np.ndarray, grid: CellGrid) -> np.ndarray:
    rects = grid.cell_rects().astype(np.intp)
    x0, y0, x1, y1 = rects.T
    return sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]


def channel_planes(img, grad: GradientField | None = None) -> list[np.ndarray]:
    img = as_image(img)
    if grad is None:
        grad = compute_gradients(img)
    return [img, grad.magnitude]


def channel_sums_from_planes(planes, grid: CellGrid) -> np.ndarray:
    """(channels, rows, cols) cell sums via summed-area tables."""
    grid.check_fits(planes[0].shape)
    out = [_cell_sums(summed_area_table(p), grid).reshape(grid.rows, grid.cols) for p in planes]
    return np.stack(out)


def compute_channel_sums(img, grid: CellGrid | None = None) -> np.ndarray:
    """Flat channel-sum descriptor: intensity cells, then gradient-magnitude cells."""
    img = as_image(img)
    grid = grid or CellGrid.for_window(img.shape[1], img.shape[0])
    grid.check_fits(img.shape)
    return channel_sums_from_planes(channel_planes(img), grid).ravel()


def compute_features(img, kind: str, grid: CellGrid | None = None, bins: int = DEFAULT_BINS,
                     soft: bool = False) -> np.ndarray:
    if kind == "hog":
        return compute_hog(img, grid, bins, soft)
    if kind == "channels":
        return compute_channel_sums(img, grid)
    raise ValueError(f"unknown feature kind {kind!r}")


def feature_dim(kind: str, grid: CellGrid, bins: int = DEFAULT_BINS) -> int:
    if kind == "hog":
        return grid.n_cells * bins
    return grid.n_cells * len(CHANNELS)


def write_descriptors_csv(path, ids, descriptors) -> None:
    """One row per window: id, then the descriptor values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for wid, row in zip(ids, descriptors):
            writer.writerow([wid] + [repr(float(v)) for v in row])


def read_descriptors_csv(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            ids.append(rec[0])
            rows.append([float(v) for v in rec[1:]])
    return ids, np.array(rows)
