"""Grayscale images as 2-D float arrays in [0, 1], indexed [row, col]."""
from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np

from .errors import ImageTooSmall, MalformedFile
from .geometry import EPS, Homography

FILL_VALUE = 0.5


class GradientField(NamedTuple):
    magnitude: np.ndarray
    angle: np.ndarray


def as_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    return img


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedFile("unexpected end of PGM header")
    return data[start:pos], pos


def load_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary (P5) PGM; intensities are scaled by 1/maxval."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise MalformedFile(f"{path}: not a binary PGM (bad magic {data[:2]!r})")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise MalformedFile(f"{path}: bad header field {tok!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedFile(f"{path}: bad dimensions {width}x{height}")
    if not 1 <= maxval <= 255:
        raise MalformedFile(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + width * height]
    if len(payload) != width * height:
        raise MalformedFile(f"{path}: truncated payload ({len(payload)} of {width * height} bytes)")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    if pixels.max(initial=0) > maxval:
        raise MalformedFile(f"{path}: pixel value exceeds maxval")
    return pixels.astype(np.float64) / maxval


def quantize(img) -> np.ndarray:
    return np.round(np.clip(as_image(img), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_pgm(img, path: str | os.PathLike) -> None:
    q = quantize(img)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())


def sample_bilinear(img, xs, ys, fill: float = FILL_VALUE) -> np.ndarray:
    """Bilinear samples at (xs, ys); neighbours outside the image read ``fill``."""
    img = as_image(img)
    h, w = img.shape
    padded = np.pad(img, 1, constant_values=fill)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    bad = ~(np.isfinite(xs) & np.isfinite(ys))
    # clamp far-away samples so they land in the fill border
    xs = np.clip(np.where(bad, -1.0, xs), -1.0, w)
    ys = np.clip(np.where(bad, -1.0, ys), -1.0, h)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    xi = x0.astype(np.intp) + 1
    yi = y0.astype(np.intp) + 1
    xi1 = np.minimum(xi + 1, w + 1)
    yi1 = np.minimum(yi + 1, h + 1)
    top = padded[yi, xi] * (1 - fx) + padded[yi, xi1] * fx
    bot = padded[yi1, xi] * (1 - fx) + padded[yi1, xi1] * fx
    out = top * (1 - fy) + bot * fy
    return np.where(bad, fill, out)


def warp_window(img, h: Homography, out_size: tuple[int, int], fill: float = FILL_VALUE) -> np.ndarray:
    """Resample ``img`` so that output pixel p takes the value at h(p).

    ``out_size`` is (width, height).  Pixel centers sit on integer coordinates.
    """
    w_out, h_out = out_size
    ys, xs = np.mgrid[0:h_out, 0:w_out].astype(np.float64)
    m = h.m
    u = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    v = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    w = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.abs(w) > EPS
        sx = np.where(safe, u / np.where(safe, w, 1.0), np.nan)
        sy = np.where(safe, v / np.where(safe, w, 1.0), np.nan)
    return sample_bilinear(img, sx, sy, fill)


def compute_gradients(img) -> GradientField:
    """Unsigned image gradients.

    Central differences (f[i+1] - f[i-1]) / 2 in the interior and one-sided
    differences on the border.  Angles are folded into [0, pi); pixels with
    zero magnitude get angle 0.
    """
    img = as_image(img)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ImageTooSmall(f"gradients need at least 3x3 pixels, got {img.shape[1]}x{img.shape[0]}")
    gy, gx = np.gradient(img)
    # fold onto the upper half plane before atan2 so g and -g agree bit for bit
    flip = (gy < 0) | ((gy == 0) & (gx < 0))
    gx = np.where(flip, -gx, gx)
    gy = np.where(flip, -gy, gy)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    ang = np.where((mag == 0) | (ang >= np.pi), 0.0, ang)
    return GradientField(mag, ang)
