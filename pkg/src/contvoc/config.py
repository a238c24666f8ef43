"""Flat key=value pipeline configuration with module defaults."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, ContVocError, IoError
from .mvf import MvfConfig
from .pitch import TrackerConfig
from .tracks import DEFAULT_FPS, DEFAULT_SAMPLE_RATE, FrameGrid, MgcConfig


@dataclass(frozen=True)
class PipelineConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    fps: float = DEFAULT_FPS
    # spectral envelope
    order: int = 24
    alpha: float = 0.42
    stage: int = 3
    # pitch tracking
    f_min: float = 80.0
    f_max: float = 400.0
    process_variance: float = 0.005
    voicing_threshold: float = 0.35
    energy_floor_db: float = -60.0
    # MVF
    harmonicity_threshold: float = 6.0
    mvf_floor: float = 300.0
    group_size: int = 3
    mvf_median: bool = False
    # synthesis
    noise_gain: float = 1.0
    noise_seed: int = 0
    prototype_confidence: float = 0.6
    # training
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    train_seed: int = 0
    split_seed: int = 0

    def __post_init__(self):
        try:
            self.tracker.validate(self.sample_rate)
            self.mvf.validate(self.sample_rate)
            self.mgc
            self.grid_for(0)
        except ContVocError as exc:
            raise ConfigError(str(exc)) from exc
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs, patience and batch_size must be >= 1")
        if not self.learning_rate > 0 or not self.noise_gain >= 0:
            raise ConfigError("learning_rate must be positive and noise_gain non-negative")
        if not 0 <= self.prototype_confidence < 1:
            raise ConfigError("prototype_confidence must lie in [0, 1)")

    @property
    def gamma(self) -> float:
        return -1.0 / self.stage

    @property
    def tracker(self) -> TrackerConfig:
        return TrackerConfig(f_min=self.f_min, f_max=self.f_max, process_variance=self.process_variance,
                             voicing_threshold=self.voicing_threshold, energy_floor_db=self.energy_floor_db)

    @property
    def mvf(self) -> MvfConfig:
        return MvfConfig(harmonicity_threshold=self.harmonicity_threshold, mvf_floor=self.mvf_floor,
                         group_size=self.group_size, median_filter=self.mvf_median)

    @property
    def mgc(self) -> MgcConfig:
        return MgcConfig(order=self.order, alpha=self.alpha, stage=self.stage)

    def grid_for(self, frame_count: int) -> FrameGrid:
        return FrameGrid.from_rate(self.sample_rate, self.fps, frame_count)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    text = raw.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        value = float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from exc
    if not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite")
    return value


def parse_overrides(pairs) -> dict:
    """Turn ``key=value`` strings into typed overrides, rejecting unknown keys.

    ``gamma`` is accepted as an alias that sets ``stage = -1/gamma``.
    """
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key == "gamma":
            g = _coerce("alpha", value)
            stage = round(-1.0 / g) if g < 0 else 0
            if stage < 1 or abs(g + 1.0 / stage) > 1e-9:
                raise ConfigError(f"gamma must be -1/n for a positive integer n, got {value}")
            out["stage"] = stage
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (key=value strings)."""
    pairs = []
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                pairs.append(line)
    values = parse_overrides(pairs)
    values.update(parse_overrides(overrides))
    return PipelineConfig(**values)
