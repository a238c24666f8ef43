"""Containers for audio, ultrasound, and per-frame vocoder parameter tracks.

Every track lives on a :class:`FrameGrid`: frame ``i`` is centred on audio
sample ``i * frame_shift_samples``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, InvalidLspError, ValidationError

DEFAULT_SAMPLE_RATE = 22050
DEFAULT_FPS = 81.67

# .trk kind codes
KIND_BASELINE_F0 = 1
KIND_CONTF0 = 2
KIND_MVF = 3
KIND_MGC_LSP = 4
KIND_VUV = 5


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        self.sample_rate = int(self.sample_rate)
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class UltrasoundSequence:
    """Stack of 8-bit scanline frames, shape ``(frames, height, width)``."""

    frames: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise ValidationError(f"frames must be 3-D (n, h, w), got shape {frames.shape}")
        if frames.dtype != np.uint8:
            raise ValidationError(f"frames must be uint8, got {frames.dtype}")
        self.frames = frames
        self.fps = float(self.fps)
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class FrameGrid:
    frame_shift_samples: int
    frame_count: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.frame_shift_samples <= 0:
            raise ValidationError("frame_shift_samples must be positive")
        if self.frame_count < 0:
            raise ValidationError("frame_count must be >= 0")
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")

    @classmethod
    def from_rate(cls, sample_rate: int = DEFAULT_SAMPLE_RATE, fps: float = DEFAULT_FPS,
                  frame_count: int = 0) -> "FrameGrid":
        """Grid whose hop is ``round(sample_rate / fps)`` samples."""
        if not fps > 0:
            raise ValidationError(f"fps must be positive, got {fps}")
        return cls(int(round(sample_rate / fps)), frame_count, sample_rate)

    @classmethod
    def for_waveform(cls, w: Waveform, fps: float = DEFAULT_FPS) -> "FrameGrid":
        hop = int(round(w.sample_rate / fps))
        return cls(hop, math.ceil(len(w) / hop), w.sample_rate)

    @property
    def frame_shift_seconds(self) -> float:
        return self.frame_shift_samples / self.sample_rate

    @property
    def duration_samples(self) -> int:
        return self.frame_count * self.frame_shift_samples

    def with_count(self, frame_count: int) -> "FrameGrid":
        return FrameGrid(self.frame_shift_samples, frame_count, self.sample_rate)

    def times(self) -> np.ndarray:
        return np.arange(self.frame_count) * self.frame_shift_seconds


def check_same_grid(*grids: FrameGrid) -> FrameGrid:
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError(f"frame grids differ: {first} vs {g}")
    return first


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list

    def as_dict(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation),
                "test": list(self.test)}


@dataclass(frozen=True)
class MgcConfig:
    """Mel-generalized cepstrum settings; ``gamma = -1/stage``."""

    order: int = 24
    alpha: float = 0.42
    stage: int = 3

    def __post_init__(self):
        if self.order < 1:
            raise ValidationError("order must be >= 1")
        if not abs(self.alpha) < 1:
            raise ValidationError("|alpha| must be < 1")
        if self.stage < 1:
            raise ValidationError("stage must be an integer >= 1")

    @property
    def gamma(self) -> float:
        return -1.0 / self.stage


# --- parameter tracks -------------------------------------------------------


@dataclass
class BaselinePitchTrack:
    """Discontinuous F0: ``f0`` is NaN wherever ``voiced`` is False."""

    voiced: np.ndarray
    f0: np.ndarray
    grid: FrameGrid
    confidence: np.ndarray | None = None

    kind = KIND_BASELINE_F0

    def __post_init__(self):
        self.voiced = np.asarray(self.voiced, dtype=bool).reshape(-1)
        f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1).copy()
        if self.voiced.size != self.grid.frame_count or f0.size != self.grid.frame_count:
            raise GridMismatchError("baseline track length differs from grid frame_count")
        if np.any(~np.isfinite(f0[self.voiced])) or np.any(f0[self.voiced] <= 0):
            raise ValidationError("voiced frames need a finite positive f0")
        f0[~self.voiced] = np.nan
        self.f0 = f0

    def to_rows(self) -> np.ndarray:
        return self.f0[:, None]

    @classmethod
    def from_rows(cls, rows, grid):
        f0 = rows[:, 0].astype(np.float64)
        return cls(np.isfinite(f0), f0, grid)


@dataclass
class VoicingTrack:
    voiced: np.ndarray
    grid: FrameGrid

    kind = KIND_VUV

    def __post_init__(self):
        self.voiced = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if self.voiced.size != self.grid.frame_count:
            raise GridMismatchError("voicing track length differs from grid frame_count")

    def to_rows(self):
        return self.voiced.astype(np.float64)[:, None]

    @classmethod
    def from_rows(cls, rows, grid):
        return cls(rows[:, 0] >= 0.5, grid)


@dataclass
class ContinuousPitchTrack:
    contf0: np.ndarray
    grid: FrameGrid
    confidence: np.ndarray | None = None

    kind = KIND_CONTF0

    def __post_init__(self):
        self.contf0 = np.asarray(self.contf0, dtype=np.float64).reshape(-1)
        if self.contf0.size != self.grid.frame_count:
            raise GridMismatchError("contf0 length differs from grid frame_count")
        if not np.all(np.isfinite(self.contf0)) or np.any(self.contf0 <= 0):
            raise ValidationError("continuous F0 must be finite and positive on every frame")

    def to_rows(self):
        return self.contf0[:, None]

    @classmethod
    def from_rows(cls, rows, grid):
        return cls(rows[:, 0], grid)


@dataclass
class MvfTrack:
    mvf: np.ndarray
    grid: FrameGrid

    kind = KIND_MVF

    def __post_init__(self):
        self.mvf = np.asarray(self.mvf, dtype=np.float64).reshape(-1)
        if self.mvf.size != self.grid.frame_count:
            raise GridMismatchError("mvf length differs from grid frame_count")
        nyquist = self.grid.sample_rate / 2
        if not np.all(np.isfinite(self.mvf)) or np.any(self.mvf <= 0) or np.any(self.mvf > nyquist * (1 + 1e-6)):
            raise ValidationError("MVF must be finite and inside (0, Nyquist]")

    def to_rows(self):
        return self.mvf[:, None]

    @classmethod
    def from_rows(cls, rows, grid):
        return cls(rows[:, 0], grid)


def check_lsp_order(lsp: np.ndarray) -> None:
    lsp = np.atleast_2d(lsp)
    if lsp.shape[1] == 0:
        return
    ok = (np.all(np.isfinite(lsp)) and np.all(lsp[:, 0] > 0) and np.all(lsp[:, -1] < np.pi)
          and np.all(np.diff(lsp, axis=1) > 0))
    if not ok:
        raise InvalidLspError("LSP frequencies must be strictly increasing inside (0, pi)")


@dataclass
class MgcLspTrack:
    """Per-frame log gain plus ``order`` line spectral frequencies (radians)."""

    gain: np.ndarray
    lsp: np.ndarray
    grid: FrameGrid
    config: MgcConfig = field(default_factory=MgcConfig)

    kind = KIND_MGC_LSP

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=np.float64).reshape(-1)
        self.lsp = np.asarray(self.lsp, dtype=np.float64).reshape(self.gain.size, -1)
        if self.gain.size != self.grid.frame_count:
            raise GridMismatchError("mgc track length differs from grid frame_count")
        if self.lsp.shape[1] != self.config.order:
            raise ValidationError(f"expected {self.config.order} LSPs per frame, got {self.lsp.shape[1]}")
        if not np.all(np.isfinite(self.gain)):
            raise ValidationError("gain must be finite")
        check_lsp_order(self.lsp)

    def to_rows(self):
        return np.column_stack([self.gain, self.lsp])

    @classmethod
    def from_rows(cls, rows, grid, config: MgcConfig | None = None):
        config = config or MgcConfig(order=rows.shape[1] - 1)
        return cls(rows[:, 0], rows[:, 1:], grid, config)


TRACK_TYPES = {
    KIND_BASELINE_F0: BaselinePitchTrack,
    KIND_CONTF0: ContinuousPitchTrack,
    KIND_MVF: MvfTrack,
    KIND_MGC_LSP: MgcLspTrack,
    KIND_VUV: VoicingTrack,
}


@dataclass
class ResidualPrototype:
    """Two-period voiced excitation template with unit RMS."""

    samples: np.ndarray
    nominal_period: int
    fallback: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        self.nominal_period = int(self.nominal_period)
        if self.samples.size != 2 * self.nominal_period:
            raise ValidationError("prototype length must be 2 * nominal_period")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("prototype contains non-finite samples")
        rms = float(np.sqrt(np.mean(self.samples ** 2))) if self.samples.size else 0.0
        if abs(rms - 1.0) > 1e-6:
            raise ValidationError(f"prototype RMS must be 1, got {rms:.9g}")
