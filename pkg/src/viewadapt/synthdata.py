"""Procedural multi-view dataset of planar figures on planar backdrops.

Every crop is rendered from one canvas drawn in object-plane coordinates at
the canonical window scale (96 px per 1.75 m).  Backdrop and figure share
that plane, so crops of one instance at different elevations are exact
homographic resamplings of each other, up to bilinear interpolation and the
clamp applied after lighting.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InsufficientDiversity
from .geometry import (
    BASE_ROW,
    CENTER_COL,
    OBJECT_PX,
    WINDOW_SIZE,
    CameraPose,
    Homography,
    ObjectPlaneSpec,
    SceneCamera,
    camera_for_pose,
    canonical_window_homography,
    crop_homography,
    object_plane_homography,
    relative_homography,
)
from .imaging import quantize, sample_bilinear, save_pgm, warp_window

ELEVATIONS = (0.0, math.pi / 8, math.pi / 4)
SCENE_SIZE = (1024, 768)
PATCH_MARGIN = 24
PX_PER_M = OBJECT_PX / 1.75

# stream tags for seed derivation
_SCENE, _FIGURE, _INSTANCE, _NEGATIVE, _FOLDS, _FRAME = range(6)


def derive_rng(master: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master), *map(int, tags)]))


# --------------------------------------------------------------------------
# procedural content

def make_scene_texture(scene_id: int, master_seed: int = 0, size=SCENE_SIZE, distractors: int = 400,
                       clutter: float = 1.0) -> np.ndarray:
    """Cluttered backdrop: smooth shading, rectangles, bars, blobs and strokes.

    ``clutter`` scales the number of painted primitives (distractors excluded).
    """
    rng = derive_rng(master_seed, _SCENE, scene_id)
    w, h = size
    tex = ndimage.gaussian_filter(rng.standard_normal((h, w)), 40)
    tex = 0.45 + 0.15 * tex / (np.abs(tex).max() + 1e-12)
    style = rng.dirichlet(np.ones(4)) * 4  # relative emphasis of clutter families

    def paint(box, mask_fn, tone):
        x0, y0 = max(int(box[0]) - 1, 0), max(int(box[1]) - 1, 0)
        x1, y1 = min(int(box[2]) + 2, w), min(int(box[3]) + 2, h)
        if x1 <= x0 or y1 <= y0:
            return
        ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        mask = mask_fn(xs, ys)
        sub = tex[y0:y1, x0:x1]
        sub *= 1 - mask
        sub += tone * mask

    for _ in range(int((60 * style[0] + 10) * clutter)):  # rectangles
        x0, y0 = rng.uniform(-50, w), rng.uniform(-50, h)
        x1, y1 = x0 + rng.uniform(15, 160), y0 + rng.uniform(15, 160)
        paint((x0, y0, x1, y1), lambda xs, ys: _soft_box(xs, ys, x0, y0, x1, y1), rng.uniform(0.1, 0.9))
    for _ in range(int((40 * style[1] + 5) * clutter)):  # vertical and horizontal bars
        if rng.random() < 0.6:
            x0 = rng.uniform(0, w)
            box = (x0, rng.uniform(-100, h / 2), x0 + rng.uniform(3, 14), rng.uniform(h / 2, h + 100))
        else:
            y0 = rng.uniform(0, h)
            box = (rng.uniform(-100, w / 2), y0, rng.uniform(w / 2, w + 100), y0 + rng.uniform(3, 12))
        paint(box, lambda xs, ys: _soft_box(xs, ys, *box), rng.uniform(0.05, 0.95))
    for _ in range(int((40 * style[2] + 5) * clutter)):  # blobs
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        ax, ay = rng.uniform(5, 45), rng.uniform(5, 45)

        def blob(xs, ys):
            d = np.sqrt(((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2)
            return np.clip((1 - d) * min(ax, ay) + 0.5, 0, 1)
        paint((cx - ax, cy - ay, cx + ax, cy + ay), blob, rng.uniform(0.05, 0.95))
    for _ in range(int((40 * style[3] + 5) * clutter)):  # strokes at random angles
        p = rng.uniform([0, 0], [w, h])
        ang = rng.uniform(0, math.pi)
        q = p + rng.uniform(20, 200) * np.array([math.cos(ang), math.sin(ang)])
        r = rng.uniform(1.5, 5)
        box = (min(p[0], q[0]) - r, min(p[1], q[1]) - r, max(p[0], q[0]) + r, max(p[1], q[1]) + r)
        paint(box, lambda xs, ys: _capsule(xs, ys, p, q, r), rng.uniform(0.05, 0.95))
    for _ in range(distractors):  # limb- and head-sized shapes
        p = rng.uniform([0, 0], [w, h])
        if rng.random() < 0.3:
            r = rng.uniform(5, 8)
            q = p
        else:
            r = rng.uniform(2.5, 6)
            ang = math.pi / 2 + rng.normal(0, 0.35)
            q = p + rng.uniform(25, 70) * np.array([math.cos(ang), math.sin(ang)])
        box = (min(p[0], q[0]) - r, min(p[1], q[1]) - r, max(p[0], q[0]) + r, max(p[1], q[1]) + r)
        paint(box, lambda xs, ys: _capsule(xs, ys, p, q, r), rng.uniform(0.05, 0.95))
    tex += 0.02 * ndimage.gaussian_filter(rng.standard_normal((h, w)), 0.7)
    return np.clip(tex, 0, 1)


def _soft_box(xs, ys, x0, y0, x1, y1):
    fx = np.clip(np.minimum(xs - x0, x1 - xs) + 0.5, 0, 1)
    fy = np.clip(np.minimum(ys - y0, y1 - ys) + 0.5, 0, 1)
    return fx * fy


def _capsule(xs, ys, p, q, radius):
    d = np.asarray(q, float) - np.asarray(p, float)
    L2 = float(d @ d) or 1e-12
    t = np.clip(((xs - p[0]) * d[0] + (ys - p[1]) * d[1]) / L2, 0, 1)
    dist = np.hypot(xs - (p[0] + t * d[0]), ys - (p[1] + t * d[1]))
    return np.clip(radius - dist + 0.5, 0, 1)


@dataclass(frozen=True)
class FigureParams:
    """Parametric planar person-like silhouette, lengths in meters."""

    head_r: float
    torso_w: float
    shoulder_y: float
    hip_y: float
    leg_r: float
    leg_spread: float
    arm_r: float
    arm_angles: tuple[float, float]
    tones: tuple[float, float, float]  # head, shirt, trousers
    stripes: float
    stripe_period: float

    @classmethod
    def sample(cls, figure_id: int, master_seed: int = 0) -> "FigureParams":
        rng = derive_rng(master_seed, _FIGURE, figure_id)
        tones = rng.uniform(0.05, 0.95, size=3)
        return cls(
            head_r=rng.uniform(0.095, 0.125),
            torso_w=rng.uniform(0.15, 0.21),
            shoulder_y=rng.uniform(1.40, 1.50),
            hip_y=rng.uniform(0.85, 0.95),
            leg_r=rng.uniform(0.055, 0.08),
            leg_spread=rng.uniform(0.0, 0.22),
            arm_r=rng.uniform(0.04, 0.055),
            arm_angles=tuple(rng.uniform(0.05, 0.6, size=2)),
            tones=tuple(float(t) for t in tones),
            stripes=float(rng.uniform(0, 0.25) if rng.random() < 0.5 else 0.0),
            stripe_period=rng.uniform(0.06, 0.15),
        )


def draw_figure(canvas: np.ndarray, params: FigureParams, base_px: tuple[float, float],
                mirror: bool = False, jitter: float = 0.0, height: float = 1.75,
                alpha_out: np.ndarray | None = None) -> np.ndarray:
    """Composite a figure onto ``canvas`` (canonical scale) with its base at ``base_px``."""
    hgt, wid = canvas.shape
    ys, xs = np.mgrid[0:hgt, 0:wid].astype(np.float64)
    s = PX_PER_M
    bx, by = base_px
    sign = -1.0 if mirror else 1.0

    def pt(x, y):
        return np.array([bx + sign * x * s, by - y * s])

    head, shirt, trousers = params.tones
    out = canvas
    parts = []
    top = height - params.head_r
    sh = params.shoulder_y
    hip = params.hip_y
    for side in (-1, 1):
        spread = params.leg_spread / 2 + 0.02 * side * jitter
        parts.append((_capsule(xs, ys, pt(side * 0.08, hip), pt(side * (0.08 + spread), params.leg_r), params.leg_r * s), trousers))
    torso = _capsule(xs, ys, pt(0, sh - 0.05), pt(0, hip + 0.02), params.torso_w * s)
    shirt_tone = shirt + params.stripes * np.sin(2 * math.pi * (by - ys) / (params.stripe_period * s))
    parts.append((torso, shirt_tone))
    for side, ang in zip((-1, 1), params.arm_angles):
        a = ang + 0.15 * jitter * side
        shoulder = (side * (params.torso_w - 0.02), sh - 0.04)
        hand = (shoulder[0] + side * 0.6 * math.sin(a), shoulder[1] - 0.6 * math.cos(a))
        parts.append((_capsule(xs, ys, pt(*shoulder), pt(*hand), params.arm_r * s), shirt))
    parts.append((_capsule(xs, ys, pt(0, sh - 0.02), pt(0, top), 0.05 * s), head))
    parts.append((_capsule(xs, ys, pt(0, top), pt(0, top), params.head_r * s), head))
    alpha = np.zeros_like(canvas) if alpha_out is None else alpha_out
    for mask, tone in parts:
        out = out * (1 - mask) + np.clip(tone, 0, 1) * mask
        alpha[:] = alpha + mask * (1 - alpha)
    return out


# --------------------------------------------------------------------------
# crops

@dataclass(frozen=True)
class SceneSpec:
    scene_id: int
    figure_id: int | None
    anchor: tuple[float, float]      # window base position in scene-texture pixels
    gain: float = 1.0
    offset: float = 0.0
    mirror: bool = False
    jitter: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.5 <= self.gain <= 1.5 and -0.2 <= self.offset <= 0.2):
            raise ValueError(f"lighting gain/offset out of range: {self.gain}, {self.offset}")


def _patch_bounds(elevations, distance: float):
    """Canonical-window pixel box that covers every crop at these elevations."""
    lo = np.array([0.0, 0.0])
    hi = np.array(WINDOW_SIZE, dtype=float)
    can = canonical_window_homography()
    for e in elevations:
        h = relative_homography(can, crop_homography(CameraPose(e, distance)))
        c = h.apply([[0, 0], [WINDOW_SIZE[0], 0], [WINDOW_SIZE[0], WINDOW_SIZE[1]], [0, WINDOW_SIZE[1]]])
        lo = np.minimum(lo, c.min(axis=0))
        hi = np.maximum(hi, c.max(axis=0))
    lo = np.floor(lo) - PATCH_MARGIN
    hi = np.ceil(hi) + PATCH_MARGIN
    return int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])


class Renderer:
    """Caches scene textures and renders crops for a master seed."""

    def __init__(self, master_seed: int = 0, distance: float = 6.0, elevations=ELEVATIONS):
        self.master_seed = master_seed
        self.distance = distance
        self.bounds = _patch_bounds(elevations, distance)
        self._scenes: dict[int, np.ndarray] = {}
        self._figures: dict[int, FigureParams] = {}

    def scene(self, scene_id: int) -> np.ndarray:
        if scene_id not in self._scenes:
            self._scenes[scene_id] = make_scene_texture(scene_id, self.master_seed)
        return self._scenes[scene_id]

    def figure(self, figure_id: int) -> FigureParams:
        if figure_id not in self._figures:
            self._figures[figure_id] = FigureParams.sample(figure_id, self.master_seed)
        return self._figures[figure_id]

    def canvas(self, spec: SceneSpec) -> tuple[np.ndarray, tuple[int, int]]:
        """Object-plane canvas for ``spec`` and the canvas position of window pixel (0, 0)."""
        x0, y0, x1, y1 = self.bounds
        tex = self.scene(spec.scene_id)
        ax, ay = int(round(spec.anchor[0])), int(round(spec.anchor[1]))
        # window pixel (u, v) sits at texture (ax - CENTER_COL + u, ay - BASE_ROW + v)
        tx0 = ax - int(CENTER_COL) + x0
        ty0 = ay - int(BASE_ROW) + y0
        patch = _take_wrapped(tex, tx0, ty0, x1 - x0, y1 - y0)
        if spec.figure_id is not None:
            base = (CENTER_COL - x0, BASE_ROW - y0)
            patch = draw_figure(patch, self.figure(spec.figure_id), base, spec.mirror, spec.jitter)
        return patch, (-x0, -y0)

    def render(self, spec: SceneSpec, pose: CameraPose) -> tuple[np.ndarray, tuple[float, float, float, float]]:
        """Crop of ``spec`` seen from ``pose``, plus the truth window rect in the crop."""
        canvas, (ox, oy) = self.canvas(spec)
        to_canvas = Homography.translation(ox, oy) @ relative_homography(
            canonical_window_homography(), crop_homography(pose))
        img = warp_window(canvas, to_canvas, WINDOW_SIZE)
        img = np.clip(spec.gain * img + spec.offset, 0.0, 1.0)
        return img, truth_rect(pose)


def _take_wrapped(tex, x0, y0, w, h):
    H, W = tex.shape
    rows = np.mod(np.arange(y0, y0 + h), H)
    cols = np.mod(np.arange(x0, x0 + w), W)
    return tex[np.ix_(rows, cols)].copy()


def truth_rect(pose: CameraPose) -> tuple[float, float, float, float]:
    """Bounding box (x, y, w, h) of the canonical window footprint in a crop at ``pose``."""
    h = relative_homography(crop_homography(pose), canonical_window_homography())
    c = h.apply([[0, 0], [WINDOW_SIZE[0], 0], [WINDOW_SIZE[0], WINDOW_SIZE[1]], [0, WINDOW_SIZE[1]]])
    lo, hi = c.min(axis=0), c.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))


def render_example(spec: SceneSpec, pose: CameraPose, renderer: Renderer | None = None):
    renderer = renderer or Renderer(spec.rng_seed, pose.distance)
    return renderer.render(spec, pose)


# --------------------------------------------------------------------------
# datasets

@dataclass
class DatasetConfig:
    figures: int = 12
    scenes: int = 6
    instances: int = 3
    elevations: tuple[float, ...] = ELEVATIONS
    negatives_per_scene: int = 20
    folds: int = 3
    distance: float = 6.0
    gain_range: tuple[float, float] = (0.7, 1.3)
    offset_range: tuple[float, float] = (-0.1, 0.1)
    seed: int = 0


@dataclass
class ManifestEntry:
    path: str
    label: str              # "object" or "background"
    elevation: float
    scene: int
    figure: int             # -1 for background
    instance: int
    scene_fold: int
    figure_fold: int        # -1 for background
    truth: tuple[float, float, float, float] | None
    anchor: tuple[float, float]


@dataclass
class Dataset:
    config: DatasetConfig
    entries: list[ManifestEntry]
    images: np.ndarray = field(repr=False)  # (N, 128, 64) uint8

    def image(self, i: int) -> np.ndarray:
        return self.images[i].astype(np.float64) / 255.0

    def select(self, **crit) -> np.ndarray:
        idx = []
        for i, e in enumerate(self.entries):
            if all(_matches(getattr(e, k), v) for k, v in crit.items()):
                idx.append(i)
        return np.array(idx, dtype=np.intp)

    def fold_split(self, fold: int, elevation_train: float, elevation_test: float):
        """Indices (train, test) honoring figure and scene disjointness."""
        train, test = [], []
        for i, e in enumerate(self.entries):
            is_test_scene = e.scene_fold == fold
            is_test_fig = e.figure_fold == fold
            if e.label == "object":
                if _close(e.elevation, elevation_test) and is_test_scene and is_test_fig:
                    test.append(i)
                if _close(e.elevation, elevation_train) and not is_test_scene and not is_test_fig:
                    train.append(i)
            else:
                if _close(e.elevation, elevation_test) and is_test_scene:
                    test.append(i)
                if _close(e.elevation, elevation_train) and not is_test_scene:
                    train.append(i)
        return np.array(train, dtype=np.intp), np.array(test, dtype=np.intp)

    def labels(self, idx) -> np.ndarray:
        return np.array([1.0 if self.entries[i].label == "object" else -1.0 for i in idx])


def _close(a, b):
    return abs(a - b) < 1e-9


def _matches(value, want):
    if isinstance(want, float):
        return _close(value, want)
    return value == want


def fold_assignment(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    perm = rng.permutation(n)
    out = np.empty(n, dtype=int)
    out[perm] = np.arange(n) % folds
    return out


def _rect_intersects(a, b, wrap=SCENE_SIZE) -> bool:
    """Rect intersection on the torus tiled by the scene textures."""
    for dx in (-wrap[0], 0, wrap[0]):
        for dy in (-wrap[1], 0, wrap[1]):
            if (a[0] < b[0] + dx + b[2] and b[0] + dx < a[0] + a[2]
                    and a[1] < b[1] + dy + b[3] and b[1] + dy < a[1] + a[3]):
                return True
    return False


def _figure_footprint(anchor):
    """Scene-texture rect (x, y, w, h) a figure placed at ``anchor`` can touch."""
    return (anchor[0] - 40.0, anchor[1] - 110.0, 80.0, 115.0)


def _window_footprint(anchor):
    """Scene-texture rect of the canonical window at ``anchor``.

    Figures are composited per crop and never enter the textures, so every
    negative is object-free; this only keeps negatives off figure placements.
    """
    return (anchor[0] - CENTER_COL, anchor[1] - BASE_ROW, float(WINDOW_SIZE[0]), float(WINDOW_SIZE[1]))


def generate_dataset(config: DatasetConfig) -> Dataset:
    """Render every crop in memory (deterministic in ``config.seed``)."""
    if config.folds < 2:
        raise InsufficientDiversity("need at least 2 folds")
    if config.figures < max(2, config.folds) or config.scenes < max(2, config.folds):
        raise InsufficientDiversity(
            f"{config.figures} figures / {config.scenes} scenes cannot fill {config.folds} disjoint folds")
    seed = config.seed
    renderer = Renderer(seed, config.distance, config.elevations)
    fold_rng = derive_rng(seed, _FOLDS)
    fig_fold = fold_assignment(config.figures, config.folds, fold_rng)
    scene_fold = fold_assignment(config.scenes, config.folds, fold_rng)
    poses = [CameraPose(e, config.distance) for e in config.elevations]
    truths = [truth_rect(p) for p in poses]
    W, H = SCENE_SIZE

    entries, images = [], []
    for scene in range(config.scenes):
        placed = []
        for fig in range(config.figures):
            for inst in range(config.instances):
                rng = derive_rng(seed, _INSTANCE, scene, fig, inst)
                anchor = (float(rng.integers(0, W)), float(rng.integers(0, H)))
                spec = SceneSpec(scene, fig, anchor,
                                 gain=rng.uniform(*config.gain_range), offset=rng.uniform(*config.offset_range),
                                 mirror=bool(rng.random() < 0.5), jitter=rng.uniform(-1, 1))
                placed.append(_figure_footprint(anchor))
                canvas, origin = renderer.canvas(spec)
                for k, pose in enumerate(poses):
                    img = _render_from_canvas(canvas, origin, spec, pose)
                    images.append(quantize(img))
                    entries.append(ManifestEntry(
                        f"pos/s{scene:02d}_f{fig:03d}_i{inst:02d}_e{k}.pgm", "object", pose.elevation,
                        scene, fig, inst, int(scene_fold[scene]), int(fig_fold[fig]), truths[k], anchor))
        for neg in range(config.negatives_per_scene):
            rng = derive_rng(seed, _NEGATIVE, scene, neg)
            for _ in range(5000):
                anchor = (float(rng.integers(0, W)), float(rng.integers(0, H)))
                foot = _window_footprint(anchor)
                if not any(_rect_intersects(foot, p) for p in placed):
                    break
            else:
                raise InsufficientDiversity(f"scene {scene}: no object-free spot left for a negative")
            spec = SceneSpec(scene, None, anchor, gain=rng.uniform(*config.gain_range),
                             offset=rng.uniform(*config.offset_range))
            canvas, origin = renderer.canvas(spec)
            for k, pose in enumerate(poses):
                img = _render_from_canvas(canvas, origin, spec, pose)
                images.append(quantize(img))
                entries.append(ManifestEntry(
                    f"neg/s{scene:02d}_n{neg:04d}_e{k}.pgm", "background", pose.elevation,
                    scene, -1, neg, int(scene_fold[scene]), -1, None, anchor))
    return Dataset(config, entries, np.stack(images))


def _render_from_canvas(canvas, origin, spec: SceneSpec, pose: CameraPose) -> np.ndarray:
    to_canvas = Homography.translation(*origin) @ relative_homography(
        canonical_window_homography(), crop_homography(pose))
    img = warp_window(canvas, to_canvas, WINDOW_SIZE)
    return np.clip(spec.gain * img + spec.offset, 0.0, 1.0)


def audit_dataset(ds: Dataset) -> list[str]:
    """Fold hygiene and negative-placement checks; returns a list of problems."""
    problems = []
    folds = ds.config.folds
    for fold in range(folds):
        for e_tr in ds.config.elevations:
            train, test = ds.fold_split(fold, e_tr, e_tr)
            tr_figs = {ds.entries[i].figure for i in train} - {-1}
            te_figs = {ds.entries[i].figure for i in test} - {-1}
            tr_sc = {ds.entries[i].scene for i in train}
            te_sc = {ds.entries[i].scene for i in test}
            if tr_figs & te_figs:
                problems.append(f"fold {fold}: figures shared {sorted(tr_figs & te_figs)}")
            if tr_sc & te_sc:
                problems.append(f"fold {fold}: scenes shared {sorted(tr_sc & te_sc)}")
    placed: dict[int, list] = {}
    for e in ds.entries:
        if e.label == "object":
            placed.setdefault(e.scene, []).append(_figure_footprint(e.anchor))
    for e in ds.entries:
        if e.label == "background":
            foot = _window_footprint(e.anchor)
            if any(_rect_intersects(foot, p) for p in placed.get(e.scene, [])):
                problems.append(f"{e.path}: negative overlaps a figure placement")
    return problems


MANIFEST_FIELDS = ["path", "label", "elevation", "scene", "figure", "instance", "scene_fold", "figure_fold",
                   "truth_x", "truth_y", "truth_w", "truth_h", "anchor_x", "anchor_y"]


def write_manifest(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            truth = e.truth if e.truth is not None else ("", "", "", "")
            writer.writerow([e.path, e.label, repr(e.elevation), e.scene, e.figure, e.instance, e.scene_fold,
                             e.figure_fold, *[repr(v) if v != "" else "" for v in truth], repr(e.anchor[0]),
                             repr(e.anchor[1])])


def read_manifest(path) -> list[ManifestEntry]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            truth = None
            if rec["truth_x"]:
                truth = tuple(float(rec[k]) for k in ("truth_x", "truth_y", "truth_w", "truth_h"))
            out.append(ManifestEntry(rec["path"], rec["label"], float(rec["elevation"]), int(rec["scene"]),
                                     int(rec["figure"]), int(rec["instance"]), int(rec["scene_fold"]),
                                     int(rec["figure_fold"]), truth,
                                     (float(rec["anchor_x"]), float(rec["anchor_y"]))))
    return out


def make_dataset(config: DatasetConfig, out_dir) -> Dataset:
    """Render the dataset and write PGM crops, ``manifest.csv`` and ``dataset_config.json``."""
    ds = generate_dataset(config)
    for sub in ("pos", "neg"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for e, img in zip(ds.entries, ds.images):
        save_pgm(img.astype(np.float64) / 255.0, os.path.join(out_dir, e.path))
    write_manifest(ds.entries, os.path.join(out_dir, "manifest.csv"))
    with open(os.path.join(out_dir, "dataset_config.json"), "w") as fh:
        json.dump(asdict(config), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return ds


def load_dataset(out_dir) -> Dataset:
    from .imaging import load_pgm

    with open(os.path.join(out_dir, "dataset_config.json")) as fh:
        raw = json.load(fh)
    raw["elevations"] = tuple(raw["elevations"])
    raw["gain_range"] = tuple(raw["gain_range"])
    raw["offset_range"] = tuple(raw["offset_range"])
    config = DatasetConfig(**raw)
    entries = read_manifest(os.path.join(out_dir, "manifest.csv"))
    images = np.stack([quantize(load_pgm(os.path.join(out_dir, e.path))) for e in entries])
    return Dataset(config, entries, images)


# --------------------------------------------------------------------------
# full frames

@dataclass
class FrameScene:
    """A fixed camera over a floor with a back wall, and figures standing on the floor."""

    pose: CameraPose
    reference: ObjectPlaneSpec = field(default_factory=ObjectPlaneSpec)
    wall_y: float = 12.0
    scene_id: int = 0
    seed: int = 0
    distractors: int = 0
    clutter: float = 1.0

    def camera(self) -> SceneCamera:
        return camera_for_pose(self.pose, self.reference)


def render_frame(scene: FrameScene, figures: list[tuple[int, tuple[float, float]]] = (),
                 renderer: Renderer | None = None):
    """Render a full frame; returns (image, truth rects) with one rect per figure.

    ``figures`` lists (figure_id, (x, y)) ground positions.  Truth rects are
    the bounding boxes of the canonical window footprint at each position.
    """
    renderer = renderer or Renderer(scene.seed)
    cam = scene.camera()
    W, H = cam.image_size
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    rays = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ np.linalg.inv(cam.K).T @ cam.R
    C = cam.center
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(rays[..., 2] < -1e-12, -C[2] / rays[..., 2], np.inf)
        t_wall = np.where(rays[..., 1] > 1e-12, (scene.wall_y - C[1]) / rays[..., 1], np.inf)
    use_floor = t_floor < t_wall
    t = np.where(use_floor, t_floor, t_wall)
    t = np.where(np.isfinite(t), t, 0.0)
    P = C + rays * t[..., None]
    tex = make_scene_texture(scene.scene_id, scene.seed, distractors=scene.distractors, clutter=scene.clutter)
    s = PX_PER_M
    # the texture is not periodic; keep its wrap seams away from the scene center
    th, tw = tex.shape
    floor_img = sample_bilinear_wrapped(tex, P[..., 0] * s + tw / 2, P[..., 1] * s + th / 2)
    wall_img = sample_bilinear_wrapped(tex, P[..., 0] * s + tw / 2 + 300, -P[..., 2] * s + th / 2)
    img = np.where(use_floor, 0.8 * floor_img + 0.1, wall_img)

    truths = []
    can = canonical_window_homography()
    order = sorted(figures, key=lambda f: -np.hypot(f[1][0] - C[0], f[1][1] - C[1]))
    for fig_id, (x, y) in order:
        h_img = object_plane_homography(cam, (x, y, 0.0))
        x0, y0, x1, y1 = renderer.bounds
        canvas = np.zeros((y1 - y0, x1 - x0))
        alpha = np.zeros_like(canvas)
        canvas = draw_figure(canvas, renderer.figure(fig_id), (CENTER_COL - x0, BASE_ROW - y0), alpha_out=alpha)
        to_canvas = Homography.translation(-x0, -y0) @ relative_homography(can, h_img)
        col = warp_window(canvas, to_canvas, (W, H), fill=0.0)
        a = warp_window(alpha, to_canvas, (W, H), fill=0.0)
        img = img * (1 - a) + col * a
        win = relative_homography(h_img, can)
        c = win.apply([[0, 0], [WINDOW_SIZE[0], 0], [WINDOW_SIZE[0], WINDOW_SIZE[1]], [0, WINDOW_SIZE[1]]])
        lo, hi = c.min(axis=0), c.max(axis=0)
        truths.append((float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])))
    # report truths in the caller's order
    index = {id(f): r for f, r in zip(order, truths)}
    return np.clip(img, 0, 1), [index[id(f)] for f in figures]


def sample_bilinear_wrapped(tex, xs, ys):
    H, W = tex.shape
    return sample_bilinear(tex, np.mod(xs, W - 1), np.mod(ys, H - 1))
