"""Run configuration: an INI file with sections, every key defaulted.

Unknown sections or keys are rejected.  Command-line overrides use the
``section.key=value`` form.
"""
from __future__ import annotations

import configparser
import math
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError


def _floats(text: str) -> tuple[float, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if part:
            out.append(_angle(part))
    return tuple(out)


def _angle(text: str) -> float:
    """Float, also accepting ``pi`` expressions such as ``pi/8`` or ``3*pi/16``."""
    t = text.strip().replace(" ", "")
    try:
        return float(t)
    except ValueError:
        pass
    if "pi" not in t:
        raise ValueError(f"not a number: {text!r}")
    num, _, den = t.partition("/")
    coef = num.replace("*pi", "").replace("pi", "") or "1"
    value = float(coef) * math.pi
    return value / float(den) if den else value


@dataclass
class GeneralSection:
    seed: int = 0
    output_dir: str = "run"
    threads: int = 1


@dataclass
class DatasetSection:
    figures: int = 12
    scenes: int = 6
    instances: int = 3
    elevations: tuple[float, ...] = (0.0, math.pi / 8, math.pi / 4)
    negatives_per_scene: int = 20
    folds: int = 3
    distance: float = 6.0


@dataclass
class FeaturesSection:
    kind: str = "hog"
    cell_size: int = 8
    bins: int = 9
    mode: str = "per-cell"


@dataclass
class TrainSection:
    classifier: str = "linear"
    lam: float = 1e-4
    epochs: int = 50
    rounds: int = 50


@dataclass
class FramesSection:
    count: int = 3
    elevation: float = math.pi / 4
    distance: float = 8.0
    focal_length: float = 800.0
    extent: tuple[float, ...] = (-1.5, -1.5, 1.5, 1.5)
    pixel_stride: float = 8.0
    figures_per_frame: int = 1
    clutter: float = 1.0


@dataclass
class EvalSection:
    iou: float = 0.5
    lamr_lo: float = 1e-2
    lamr_hi: float = 1.0
    fppw: float = 1e-2
    nms: float = 0.5
    source_elevation: float = 0.0
    true_elevation: float = math.pi / 4
    sweep_step: float = math.pi / 32


@dataclass
class BenchSection:
    repetitions: int = 5
    frames: int = 1
    elevation: float = 0.5
    distance: float = 10.0
    focal_length: float = 400.0
    extent: tuple[float, ...] = (-4.5, 0.0, 4.5, 16.0)
    pixel_stride: float = 8.0


@dataclass
class RunConfig:
    general: GeneralSection = field(default_factory=GeneralSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    train: TrainSection = field(default_factory=TrainSection)
    frames: FramesSection = field(default_factory=FramesSection)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def set(self, section: str, key: str, raw: str) -> None:
        sec = getattr(self, section, None) if section in _SECTIONS else None
        if sec is None:
            raise ConfigError(f"unknown config section [{section}]")
        types = {f.name: f.type for f in fields(sec)}
        if key not in types:
            raise ConfigError(f"unknown config key {section}.{key}")
        current = getattr(sec, key)
        try:
            if isinstance(current, tuple):
                value = _floats(raw)
            elif isinstance(current, bool):
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = _angle(raw)
            else:
                value = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from None
        setattr(sec, key, value)

    def stage_seed(self, stage: str) -> int:
        """Per-stage seed derived from the master seed and a stage name."""
        ss = np.random.SeedSequence([int(self.general.seed), zlib.crc32(stage.encode())])
        return int(ss.generate_state(1)[0])

    def to_ini(self) -> str:
        lines = []
        for name in _SECTIONS:
            lines.append(f"[{name}]")
            sec = getattr(self, name)
            for f in fields(sec):
                v = getattr(sec, f.name)
                if isinstance(v, tuple):
                    v = ", ".join(repr(float(x)) for x in v)
                elif isinstance(v, float):
                    v = repr(v)
                lines.append(f"{f.name} = {v}")
            lines.append("")
        return "\n".join(lines)


_SECTIONS = ("general", "dataset", "features", "train", "frames", "eval", "bench")


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg.set(section, key, raw)
    for item in overrides:
        lhs, sep, raw = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        cfg.set(section, key, raw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.features.kind not in ("hog", "channels"):
        raise ConfigError(f"features.kind must be hog or channels, got {cfg.features.kind!r}")
    if cfg.features.mode not in ("shared", "per-cell"):
        raise ConfigError(f"features.mode must be shared or per-cell, got {cfg.features.mode!r}")
    if cfg.train.classifier not in ("linear", "stumps"):
        raise ConfigError(f"train.classifier must be linear or stumps, got {cfg.train.classifier!r}")
    for name in ("frames", "bench"):
        if len(getattr(cfg, name).extent) != 4:
            raise ConfigError(f"{name}.extent needs four numbers x0, y0, x1, y1")
    if cfg.general.threads < 1:
        raise ConfigError("general.threads must be >= 1")
