"""Command-line entry point: ``viewadapt <subcommand> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

from .errors import ConfigError, DataError, GeometryError, ViewAdaptError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _out(path: str, force: bool) -> str:
    if os.path.exists(path) and not force:
        raise UsageError(f"refusing to overwrite {path} (use --force)")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _config(args):
    from .config import load_config

    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"general.seed={args.seed}")
    if getattr(args, "output_dir", None):
        overrides.append(f"general.output_dir={args.output_dir}")
    cfg = load_config(args.config, overrides)
    if args.threads is not None:
        cfg.general.threads = args.threads
    return cfg


def _dir(cfg, *parts) -> str:
    return os.path.join(cfg.general.output_dir, *parts)


def _dataset_config(cfg):
    from .synthdata import DatasetConfig

    d = cfg.dataset
    return DatasetConfig(figures=d.figures, scenes=d.scenes, instances=d.instances, elevations=tuple(d.elevations),
                         negatives_per_scene=d.negatives_per_scene, folds=d.folds, distance=d.distance,
                         seed=cfg.stage_seed("dataset"))


def _grid(cfg):
    from .features import CellGrid

    return CellGrid.for_window(cell_size=cfg.features.cell_size)


def _frame_pose(cfg):
    from .geometry import CameraPose

    f = cfg.frames
    return CameraPose(f.elevation, f.distance, f.focal_length)


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args, cfg) -> None:
    import numpy as np

    from .detector import world_stride
    from .imaging import save_pgm
    from .synthdata import FrameScene, Renderer, audit_dataset, make_dataset, render_frame

    data_dir = _dir(cfg, "data")
    _out(os.path.join(data_dir, "manifest.csv"), args.force)
    ds = make_dataset(_dataset_config(cfg), data_dir)
    problems = audit_dataset(ds)
    if problems:
        raise DataError("dataset audit failed: " + problems[0])

    frames_dir = _dir(cfg, "frames")
    truth_path = _out(os.path.join(frames_dir, "truth.csv"), args.force)
    fr = cfg.frames
    pose = _frame_pose(cfg)
    rng = np.random.default_rng(cfg.stage_seed("frames"))
    stride = world_stride(fr.pixel_stride)
    x0, y0, x1, y1 = fr.extent
    nx = int(math.floor((x1 - x0) / stride + 1e-9)) + 1
    ny = int(math.floor((y1 - y0) / stride + 1e-9)) + 1
    renderer = Renderer(cfg.stage_seed("frames"))
    rows = []
    for k in range(fr.count):
        figs = []
        for _ in range(fr.figures_per_frame):
            fid = int(rng.integers(0, cfg.dataset.figures))
            pos = (x0 + stride * int(rng.integers(0, nx)), y0 + stride * int(rng.integers(0, ny)))
            figs.append((fid, pos))
        scene = FrameScene(pose, scene_id=int(rng.integers(0, 1000)), seed=cfg.stage_seed("frames"),
                           clutter=fr.clutter)
        img, truths = render_frame(scene, figs, renderer)
        name = f"frame_{k:03d}"
        save_pgm(img, os.path.join(frames_dir, name + ".pgm"))
        for (fid, pos), t in zip(figs, truths):
            rows.append([name, *(repr(float(v)) for v in t), repr(float(pos[0])), repr(float(pos[1])), fid])
    with open(truth_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "w", "h", "world_x", "world_y", "figure"])
        w.writerows(rows)
    print(f"wrote {len(ds.entries)} crops to {data_dir} and {fr.count} frames to {frames_dir}")


def _load_dataset(cfg, data_dir=None):
    from .synthdata import load_dataset

    data_dir = data_dir or _dir(cfg, "data")
    if not os.path.exists(os.path.join(data_dir, "manifest.csv")):
        raise DataError(f"no dataset at {data_dir}; run gen-data first")
    return load_dataset(data_dir)


def cmd_train(args, cfg) -> None:
    import numpy as np

    from .classifier import save_model, train_linear, train_stumps
    from .features import compute_features
    from .geometry import CameraPose

    ds = _load_dataset(cfg, args.data)
    e = args.elevation
    idx = ds.select(elevation=e)
    if len(idx) == 0:
        raise DataError(f"dataset has no crops at elevation {e!r}")
    grid = _grid(cfg)
    X = np.array([compute_features(ds.image(i), cfg.features.kind, grid, cfg.features.bins) for i in idx])
    y = ds.labels(idx)
    meta = dict(feature_kind=cfg.features.kind, training_view=CameraPose(e, ds.config.distance), grid=grid,
                bins=cfg.features.bins)
    seed = cfg.stage_seed("train")
    if cfg.train.classifier == "linear":
        model = train_linear(X, y, lam=cfg.train.lam, epochs=cfg.train.epochs, seed=seed, **meta)
    else:
        model = train_stumps(X, y, rounds=cfg.train.rounds, seed=seed, **meta)
    path = _out(args.out or _dir(cfg, "models", f"model_e{e:.4f}.json"), args.force)
    save_model(model, path)
    print(f"trained {cfg.train.classifier} model on {len(idx)} crops -> {path}")


def cmd_adapt(args, cfg) -> None:
    from dataclasses import replace

    from .classifier import LinearModel, adapt_linear, load_model, save_model
    from .geometry import CameraPose, crop_homography, relative_homography
    from .remap import feature_remap

    model = load_model(args.model)
    if not isinstance(model, LinearModel):
        raise DataError("only linear models can be adapted; stump ensembles use feature-remap at detection time")
    src = model.training_view or CameraPose(0.0, cfg.dataset.distance)
    if args.source is not None:
        src = replace(src, elevation=args.source)
    tgt = replace(src, elevation=args.target)
    h = relative_homography(crop_homography(tgt), crop_homography(src))
    G = feature_remap(h, model.grid, model.grid, model.bins, cfg.features.mode, model.feature_kind).G
    adapted = adapt_linear(model, G, target_view=tgt)
    path = _out(args.out or _dir(cfg, "models", f"adapted_e{src.elevation:.4f}_to_{tgt.elevation:.4f}.json"),
                args.force)
    save_model(adapted, path)
    print(f"adapted {args.model} from elevation {src.elevation:.4f} to {tgt.elevation:.4f} -> {path}")


def _frame_list(paths, frames_dir):
    if paths:
        return [(os.path.splitext(os.path.basename(p))[0], p) for p in paths]
    if not os.path.isdir(frames_dir):
        raise DataError(f"no frames given and {frames_dir} does not exist")
    names = sorted(f for f in os.listdir(frames_dir) if f.endswith(".pgm"))
    return [(os.path.splitext(n)[0], os.path.join(frames_dir, n)) for n in names]


def cmd_detect(args, cfg) -> None:
    from .classifier import load_model
    from .detector import Detector, generate_windows, world_stride, write_detections_csv
    from .imaging import load_pgm

    model = load_model(args.model)
    fr = cfg.frames
    pose = _frame_pose(cfg)
    train_pose = model.training_view
    windows = generate_windows(pose, fr.extent, world_stride(fr.pixel_stride), train_pose=train_pose,
                               cell_size=model.grid.cell_size, kind=model.feature_kind, bins=model.bins,
                               mode=cfg.features.mode)
    det = Detector(model, windows, cfg.features.mode)
    rows = []
    for name, path in _frame_list(args.frames, _dir(cfg, "frames")):
        img = load_pgm(path)
        if img.shape != (pose.image_size[1], pose.image_size[0]):
            raise DataError(f"{path}: frame is {img.shape[1]}x{img.shape[0]}, pose expects "
                            f"{pose.image_size[0]}x{pose.image_size[1]}")
        for d in det.detect(img, args.pipeline, nms=cfg.eval.nms):
            rows.append((name, d))
    out = _out(args.out or _dir(cfg, "detections", f"{args.pipeline}.csv"), args.force)
    write_detections_csv(out, rows)
    print(f"{len(rows)} detections from {len(windows)} windows -> {out}")


def _read_truth(path):
    truths: dict[str, list] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            truths.setdefault(rec["frame"], []).append(tuple(float(rec[k]) for k in ("x", "y", "w", "h")))
    return truths


def cmd_eval(args, cfg) -> None:
    from .detector import read_detections_csv
    from .evalbench import Matches, log_average_miss_rate, match_detections, miss_rate_curve, write_curve_csv

    truth_path = args.truth or _dir(cfg, "frames", "truth.csv")
    if not os.path.exists(truth_path):
        raise DataError(f"truth file {truth_path} not found")
    truths = _read_truth(truth_path)
    dets: dict[str, list] = {}
    for frame, d in read_detections_csv(args.detections):
        dets.setdefault(frame, []).append(d)
    frames = sorted(set(truths) | set(dets))
    matches = Matches.concat(match_detections(dets.get(f, []), truths.get(f, []), cfg.eval.iou) for f in frames)
    curve = miss_rate_curve(matches, len(frames), "fppi")
    lamr = log_average_miss_rate(curve, cfg.eval.lamr_lo, cfg.eval.lamr_hi)
    stem = os.path.splitext(os.path.basename(args.detections))[0]
    out = _out(args.out or _dir(cfg, "eval", f"curve_{stem}.csv"), args.force)
    write_curve_csv(out, curve)
    summary = _out(os.path.splitext(out)[0] + "_summary.csv", args.force)
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detections", "frames", "truths", "tp", "fp", "lamr_fppi"])
        w.writerow([os.path.basename(args.detections), len(frames), matches.n_truth, matches.tp, matches.fp,
                     f"{lamr:.6f}"])
    print(f"LAMR (fppi {cfg.eval.lamr_lo:g}..{cfg.eval.lamr_hi:g}) = {lamr:.4f}; curve -> {out}")


def cmd_sweep(args, cfg) -> None:
    from .classifier import load_model
    from .evalbench import crop_feature_matrix, plot_sweep_svg, robustness_sweep, train_fold_models, write_sweep_csv

    ds = _load_dataset(cfg, args.data)
    X = crop_feature_matrix(ds, cfg.features.kind, _grid(cfg), cfg.features.bins)
    ev = cfg.eval
    if args.elevations:
        from .config import _floats
        elevations = list(_floats(args.elevations))
    else:
        n = int(math.floor((math.pi / 2) / ev.sweep_step + 1e-9))
        elevations = [k * ev.sweep_step for k in range(n + 1)]
    if args.model:
        models = load_model(args.model)
        source = models.training_view.elevation if models.training_view else ev.source_elevation
    else:
        source = ev.source_elevation
        models = train_fold_models(ds, X, source, cfg.train.lam, cfg.train.epochs, cfg.stage_seed("train"))
    rows = robustness_sweep(models, ds, X, ev.true_elevation, elevations, ev.fppw, source, cfg.features.mode)
    out = _out(args.out or _dir(cfg, "sweep", "sweep.csv"), args.force)
    write_sweep_csv(out, rows)
    svg = _out(os.path.splitext(out)[0] + ".svg", args.force)
    base = next((m for e, m in rows if e == source), None)
    plot_sweep_svg(rows, svg, ev.true_elevation, base)
    best = min(rows, key=lambda r: r[1])
    print(f"best adapted elevation {best[0]:.4f} (miss rate {best[1]:.4f}); sweep -> {out}")


def cmd_bench(args, cfg) -> None:
    import numpy as np

    from .classifier import LinearModel, load_model
    from .detector import PIPELINES, Detector, generate_windows, world_stride
    from .evalbench import benchmark, format_bench_table, write_bench_csv
    from .features import feature_dim
    from .geometry import CameraPose
    from .synthdata import FrameScene, Renderer, render_frame

    b = cfg.bench
    pose = CameraPose(b.elevation, b.distance, b.focal_length)
    grid = _grid(cfg)
    if args.model:
        model = load_model(args.model)
    else:
        rng = np.random.default_rng(cfg.stage_seed("bench"))
        model = LinearModel(rng.standard_normal(feature_dim("hog", grid, cfg.features.bins)), 0.0, "hog",
                            CameraPose(0.0), grid, cfg.features.bins)
    windows = generate_windows(pose, b.extent, world_stride(b.pixel_stride), cell_size=grid.cell_size,
                               mode=cfg.features.mode)
    renderer = Renderer(cfg.stage_seed("bench"))
    frames = []
    for k in range(b.frames):
        img, _ = render_frame(FrameScene(pose, scene_id=k, seed=cfg.stage_seed("bench")), [], renderer)
        frames.append(img)
    pipelines = [p for p in PIPELINES if p != "classifier-adapt" or isinstance(model, LinearModel)]
    det = Detector(model, windows, cfg.features.mode)
    report = benchmark(det, frames, pipelines, b.repetitions)
    out = _out(args.out or _dir(cfg, "bench", "bench.csv"), args.force)
    write_bench_csv(out, report)
    table = format_bench_table(report)
    with open(_out(os.path.splitext(out)[0] + ".txt", args.force), "w") as fh:
        fh.write(table)
    print(table, end="")


def cmd_plot(args, cfg) -> None:
    from .evalbench import plot_curves_svg, plot_sweep_svg, read_curve_csv

    if not os.path.exists(args.csv):
        raise DataError(f"{args.csv} not found")
    with open(args.csv, newline="") as fh:
        header = next(csv.reader(fh), [])
    out = _out(args.out, args.force)
    if header[:1] == ["elevation"]:
        with open(args.csv, newline="") as fh:
            rows = [(float(r["elevation"]), float(r["miss_rate"])) for r in csv.DictReader(fh)]
        plot_sweep_svg(rows, out)
    else:
        curve = read_curve_csv(args.csv)
        plot_curves_svg({os.path.splitext(os.path.basename(args.csv))[0]: curve}, out)
    print(f"plot -> {out}")


# --------------------------------------------------------------------------
# parser

def _angle_arg(text: str) -> float:
    from .config import _angle

    try:
        return _angle(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    common.add_argument("--seed", type=int, help="master seed (overrides general.seed)")
    common.add_argument("--output-dir", help="output directory (overrides general.output_dir)")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = argparse.ArgumentParser(prog="viewadapt", description="Viewpoint adaptation of sliding-window detectors.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="render the synthetic crop dataset and test frames")

    t = sub.add_parser("train", parents=[common], help="train a classifier on crops at one elevation")
    t.add_argument("--elevation", type=_angle_arg, default=0.0)
    t.add_argument("--data", help="dataset directory (default <output>/data)")
    t.add_argument("--out")

    a = sub.add_parser("adapt", parents=[common], help="adapt a linear model to a new elevation")
    a.add_argument("--model", required=True)
    a.add_argument("--source", type=_angle_arg, help="source elevation (default: the model's training view)")
    a.add_argument("--target", type=_angle_arg, required=True)
    a.add_argument("--out")

    d = sub.add_parser("detect", parents=[common], help="run a detection pipeline on frames")
    d.add_argument("--model", required=True)
    d.add_argument("--frames", nargs="*", help="PGM frames (default <output>/frames/*.pgm)")
    d.add_argument("--pipeline", default="classifier-adapt",
                   choices=["unadapted", "image-warp", "classifier-adapt", "feature-remap"])
    d.add_argument("--out")

    e = sub.add_parser("eval", parents=[common], help="miss-rate curve and LAMR for a detections CSV")
    e.add_argument("--detections", required=True)
    e.add_argument("--truth", help="truth CSV (default <output>/frames/truth.csv)")
    e.add_argument("--out")

    s = sub.add_parser("sweep", parents=[common], help="elevation robustness sweep on the crop dataset")
    s.add_argument("--model", help="source model (default: per-fold models trained on the dataset)")
    s.add_argument("--data")
    s.add_argument("--elevations", help="comma-separated elevations (default 0..pi/2 in eval.sweep_step)")
    s.add_argument("--out")

    b = sub.add_parser("bench", parents=[common], help="pipeline timing on a many-window frame geometry")
    b.add_argument("--model")
    b.add_argument("--out")

    pl = sub.add_parser("plot", parents=[common], help="render a curve or sweep CSV as SVG")
    pl.add_argument("csv")
    pl.add_argument("out")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "adapt": cmd_adapt,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = _config(args)
        _set_threads(cfg.general.threads)
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"viewadapt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GeometryError, OSError, json.JSONDecodeError) as exc:
        print(f"viewadapt {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ViewAdaptError as exc:
        print(f"viewadapt {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"viewadapt {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
