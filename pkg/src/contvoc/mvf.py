"""Maximum Voiced Frequency from per-harmonic spectral contrast.

Each harmonic ``k * f0`` gets a score: the RMS magnitude in a ``+-f0/4``
band around it against the RMS of the louder of the two neighbouring
inter-harmonic bands, in dB. Harmonics stand tens of dB above their
valleys; noise scores near 0 dB. MVF is the highest harmonic reached before
a run of harmonics loses its majority vote.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import medfilt

from .errors import GridMismatchError, InvalidF0Error, ValidationError
from .tracks import ContinuousPitchTrack, FrameGrid, MvfTrack, Waveform


@dataclass(frozen=True)
class MvfConfig:
    periods: float = 4.0
    min_window: int = 1024
    harmonicity_threshold: float = 6.0
    mvf_floor: float = 300.0
    group_size: int = 3
    median_filter: bool = False

    def validate(self, sample_rate: int) -> None:
        if not self.harmonicity_threshold > 0:
            raise ValidationError("harmonicity_threshold must be positive")
        if not 0 < self.mvf_floor < sample_rate / 2:
            raise ValidationError("mvf_floor must lie inside (0, Nyquist)")
        if self.group_size < 1:
            raise ValidationError("group_size must be >= 1")

    def window_length(self, sample_rate: int, f0: float) -> int:
        return max(self.min_window, int(math.ceil(self.periods * sample_rate / f0)))


def _band_rms(mag: np.ndarray, freqs: np.ndarray, lo: float, hi: float) -> float:
    sel = (freqs >= lo) & (freqs <= hi)
    if not sel.any():
        return math.nan
    return float(np.sqrt(np.mean(mag[sel] ** 2)))


def harmonic_scores(frame, sample_rate: int, f0: float, cfg: MvfConfig = MvfConfig()):
    """Per-harmonic contrast in dB as an array of ``(frequency, score)`` rows."""
    if not f0 > 0 or not math.isfinite(f0):
        raise InvalidF0Error(f"f0 must be positive, got {f0}")
    x = np.asarray(frame, dtype=np.float64).reshape(-1)
    length = cfg.window_length(sample_rate, f0)
    if x.size < length:
        raise ValidationError(f"frame of {x.size} samples is shorter than the {length}-sample window")
    if x.size > length:
        start = (x.size - length) // 2
        x = x[start:start + length]
    nfft = max(2048, 1 << int(math.ceil(math.log2(length))))
    mag = np.abs(np.fft.rfft(x * np.hanning(length), nfft))
    freqs = np.arange(mag.size) * sample_rate / nfft
    nyquist = sample_rate / 2
    # relative floor keeps dB finite on silence without breaking scale invariance
    floor = 1e-12 * (mag.max() if mag.max() > 0 else 1.0) + 1e-300
    quarter = f0 / 4
    rows = []
    k = 1
    while k * f0 < nyquist:
        centre = k * f0
        peak = _band_rms(mag, freqs, centre - quarter, centre + quarter)
        below = _band_rms(mag, freqs, centre - f0 + quarter, centre - quarter)
        above = _band_rms(mag, freqs, centre + quarter, min(centre + f0 - quarter, nyquist))
        ref = np.nanmax([below, above]) if not (math.isnan(below) and math.isnan(above)) else floor
        rows.append((centre, 20 * math.log10((peak + floor) / (ref + floor))))
        k += 1
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def mvf_from_scores(scores: np.ndarray, cfg: MvfConfig, nyquist: float) -> float:
    """Highest harmonic whose score passes and whose every full group holds a majority."""
    if scores.size == 0:
        return cfg.mvf_floor
    passes = scores[:, 1] >= cfg.harmonicity_threshold
    g = cfg.group_size
    need = g // 2 + 1
    best = -1
    for k in range(passes.size):
        if k + 1 < g:
            if not passes[: k + 1].all():
                break
        elif passes[k - g + 1:k + 1].sum() < need:
            break
        if passes[k]:
            best = k
    if best < 0:
        return cfg.mvf_floor
    return float(np.clip(scores[best, 0], cfg.mvf_floor, nyquist))


def estimate_mvf(w: Waveform, contf0: ContinuousPitchTrack, grid: FrameGrid | None = None,
                 cfg: MvfConfig = MvfConfig()) -> MvfTrack:
    grid = grid or contf0.grid
    if contf0.grid != grid or grid.sample_rate != w.sample_rate:
        raise GridMismatchError("contf0 track, grid and waveform disagree")
    if (grid.frame_count - 1) * grid.frame_shift_samples >= max(len(w), 1):
        raise GridMismatchError("waveform too short for the grid's frame count")
    cfg.validate(w.sample_rate)
    sr = w.sample_rate
    nyquist = sr / 2
    longest = max(cfg.window_length(sr, f) for f in contf0.contf0) if grid.frame_count else 0
    padded = np.pad(w.samples, (longest, longest + grid.duration_samples))
    out = np.empty(grid.frame_count)
    for i, f0 in enumerate(contf0.contf0):
        length = cfg.window_length(sr, f0)
        start = longest + i * grid.frame_shift_samples - length // 2
        frame = padded[start:start + length]
        if not np.any(frame):
            out[i] = cfg.mvf_floor
            continue
        out[i] = mvf_from_scores(harmonic_scores(frame, sr, f0, cfg), cfg, nyquist)
    if cfg.median_filter and out.size >= 3:
        out = medfilt(out, 3)
    return MvfTrack(out, grid)
