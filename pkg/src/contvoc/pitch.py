"""Autocorrelation pitch candidates, Kalman/RTS smoothing, and both F0 trackers.

The continuous tracker never makes a voicing decision: each frame yields a
log-F0 candidate whose observation variance grows as the autocorrelation
peak weakens, and a random-walk smoother fills silences and unvoiced stretches
by interpolating through them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyTrackError, ValidationError
from .tracks import BaselinePitchTrack, ContinuousPitchTrack, FrameGrid, Waveform

V0 = 0.05
EPSILON = 1e-3
V_MAX = 10.0


class PitchObservation(NamedTuple):
    log_f0: float
    variance: float
    confidence: float


@dataclass(frozen=True)
class TrackerConfig:
    f_min: float = 80.0
    f_max: float = 400.0
    frame_length: int | None = None
    process_variance: float = 0.005
    voicing_threshold: float = 0.35
    energy_floor_db: float = -60.0
    octave_tolerance: float = 0.9

    def validate(self, sample_rate: int) -> None:
        if not 0 < self.f_min < self.f_max < sample_rate / 2:
            raise ValidationError("need 0 < f_min < f_max < sample_rate / 2")
        if not self.process_variance > 0:
            raise ValidationError("process_variance must be positive")
        if self.frame_length is not None and self.frame_length < sample_rate / self.f_min:
            raise ValidationError("frame_length must cover at least one period of f_min")

    def frame_length_for(self, sample_rate: int) -> int:
        if self.frame_length is not None:
            return int(self.frame_length)
        return int(round(2 * sample_rate / self.f_min))


def _hann(n: int) -> np.ndarray:
    # symmetric Hann without the zero end points
    return np.hanning(n + 2)[1:-1]


def _autocorr(x: np.ndarray, max_lag: int) -> np.ndarray:
    n = x.size
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    r = np.fft.irfft(spec * spec.conj(), nfft)
    return r[:max_lag + 1]


def _peak_interp(r: np.ndarray, i: int) -> tuple[float, float]:
    """Parabolic refinement of a local maximum at index ``i``."""
    if 0 < i < r.size - 1:
        a, b, c = r[i - 1], r[i], r[i + 1]
        denom = a - 2 * b + c
        if denom < 0:
            delta = 0.5 * (a - c) / denom
            return i + delta, b - 0.25 * (a - c) * delta
    return float(i), float(r[i])


def frame_acf_candidate(frame, sample_rate: int, cfg: TrackerConfig = TrackerConfig()) -> PitchObservation:
    """Best pitch candidate of one frame from its normalized autocorrelation.

    The frame is Hann-windowed after removing its window-weighted mean; its autocorrelation is
    divided by the window's own autocorrelation so a periodic signal peaks
    near 1 at its period. Among local maxima in the lag range of
    ``[f_min, f_max]``, the shortest lag reaching ``octave_tolerance`` times
    the best peak wins, which suppresses period-doubling errors.
    """
    x = np.asarray(frame, dtype=np.float64)
    if x.size < cfg.frame_length_for(sample_rate):
        raise ValidationError(f"frame of {x.size} samples is shorter than frame_length")
    w = _hann(x.size)
    # window-weighted mean: a plain mean leaves a windowed DC bump that
    # autocorrelates perfectly and masquerades as a periodic frame
    x = x - np.dot(x, w) / w.sum()
    if not np.any(x):
        return PitchObservation(math.nan, V_MAX, 0.0)
    lag_min = max(1, int(math.floor(sample_rate / cfg.f_max)))
    lag_max = min(x.size - 2, int(math.ceil(sample_rate / cfg.f_min)))
    r = _autocorr(x * w, lag_max + 1)
    if r[0] <= 0:
        return PitchObservation(math.nan, V_MAX, 0.0)
    rw = _autocorr(w, lag_max + 1)
    nacf = (r / r[0]) / (rw / rw[0])

    seg = nacf[lag_min:lag_max + 1]
    inner = np.arange(1, seg.size - 1)
    is_peak = (seg[inner] >= seg[inner - 1]) & (seg[inner] > seg[inner + 1])
    peaks = inner[is_peak] + lag_min
    if peaks.size == 0:
        best = int(np.argmax(seg)) + lag_min
        lag, height = float(best), float(nacf[best])
    else:
        refined = [_peak_interp(nacf, int(p)) for p in peaks]
        top = max(h for _, h in refined)
        lag, height = next((l, h) for l, h in refined if h >= cfg.octave_tolerance * top)
    confidence = float(np.clip(height, 0.0, 1.0))
    f0 = sample_rate / lag
    if confidence <= 0:
        return PitchObservation(math.nan, V_MAX, 0.0)
    variance = min(V0 / (confidence ** 2 + EPSILON), V_MAX)
    return PitchObservation(math.log(f0), variance, confidence)


def kalman_smooth(log_f0, variance, q: float = 0.005) -> np.ndarray:
    """Posterior mean of a random walk observed in Gaussian noise.

    State ``x_t = x_{t-1} + w_t`` with ``Var w = q``; observation
    ``y_t = x_t + v_t`` with ``Var v_t = variance[t]``. Non-finite ``y_t``
    are treated as missing. There is no prior on ``x_0`` (diffuse start), so
    the result is exactly the generalized least-squares solution of the
    ``N`` observation and ``N - 1`` increment constraints.

    Parameters
    ----------
    log_f0 : array_like, shape (N,)
    variance : array_like, shape (N,)
        Observation noise variances, all positive.
    q : float
        Process variance per frame.

    Returns
    -------
    ndarray, shape (N,)
    """
    y = np.asarray(log_f0, dtype=np.float64).reshape(-1)
    r = np.asarray(variance, dtype=np.float64).reshape(-1)
    n = y.size
    if n == 0:
        raise EmptyTrackError("cannot smooth an empty observation sequence")
    if r.size != n:
        raise ValidationError("log_f0 and variance lengths differ")
    if np.any(~(r > 0)):
        raise ValidationError("observation variances must be positive")
    if not q > 0:
        raise ValidationError("process variance must be positive")
    observed = np.isfinite(y)
    if not observed.any():
        raise EmptyTrackError("no finite observation to smooth")

    # Diffuse start: carry the state in information form until the first
    # observation arrives, which makes the initial covariance exact.
    xf = np.zeros(n)
    pf = np.zeros(n)
    xp = np.zeros(n)
    pp = np.zeros(n)
    first = int(np.argmax(observed))
    pp[: first + 1] = np.inf
    xf[first] = y[first]
    pf[first] = r[first]
    for t in range(first + 1, n):
        xp[t] = xf[t - 1]
        pp[t] = pf[t - 1] + q
        if observed[t]:
            k = pp[t] / (pp[t] + r[t])
            xf[t] = xp[t] + k * (y[t] - xp[t])
            pf[t] = (1 - k) * pp[t]
        else:
            xf[t] = xp[t]
            pf[t] = pp[t]

    xs = xf.copy()
    for t in range(n - 2, first - 1, -1):
        g = pf[t] / pp[t + 1]
        xs[t] = xf[t] + g * (xs[t + 1] - xp[t + 1])
    # frames before the first observation have no information but the walk
    xs[:first] = xs[first]
    return xs


def smooth_observations(obs: Sequence[PitchObservation], q: float = 0.005) -> np.ndarray:
    arr = np.asarray([(o.log_f0, o.variance) for o in obs], dtype=np.float64).reshape(-1, 2)
    return kalman_smooth(arr[:, 0], arr[:, 1], q)


def frame_signal(samples: np.ndarray, grid: FrameGrid, length: int) -> np.ndarray:
    """Frames of ``length`` samples centred on each hop instant, zero-padded."""
    half = length // 2
    padded = np.pad(samples, (half, half + length + grid.duration_samples))
    starts = np.arange(grid.frame_count) * grid.frame_shift_samples
    idx = starts[:, None] + np.arange(length)[None, :]
    return padded[idx]


def _check_length(w: Waveform, grid: FrameGrid) -> None:
    if grid.sample_rate != w.sample_rate:
        raise ValidationError("grid and waveform sample rates differ")
    if (grid.frame_count - 1) * grid.frame_shift_samples >= max(len(w), 1):
        raise ValidationError("waveform too short for the grid's frame count")


def analyze_pitch(w: Waveform, grid: FrameGrid, cfg: TrackerConfig = TrackerConfig()):
    """Per-frame observations and frame RMS (dBFS) for both trackers."""
    cfg.validate(w.sample_rate)
    _check_length(w, grid)
    length = cfg.frame_length_for(w.sample_rate)
    frames = frame_signal(w.samples, grid, length)
    obs = [frame_acf_candidate(f, w.sample_rate, cfg) for f in frames]
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    rms_db = 20 * np.log10(np.maximum(rms, 1e-12))
    return obs, rms_db


def track_continuous(w: Waveform, grid: FrameGrid, cfg: TrackerConfig = TrackerConfig(),
                     observations=None) -> ContinuousPitchTrack:
    if observations is None:
        observations, _ = analyze_pitch(w, grid, cfg)
    if grid.frame_count == 0:
        raise EmptyTrackError("grid has no frames")
    y = np.array([o.log_f0 for o in observations])
    v = np.array([o.variance for o in observations])
    conf = np.array([o.confidence for o in observations])
    lo, hi = cfg.f_min / 2, 2 * cfg.f_max
    if np.isfinite(y).any():
        contf0 = np.exp(kalman_smooth(y, v, cfg.process_variance))
    else:
        # no periodic evidence anywhere: hold the geometric centre of the range
        contf0 = np.full(grid.frame_count, math.sqrt(cfg.f_min * cfg.f_max))
    return ContinuousPitchTrack(np.clip(contf0, lo, hi), grid, confidence=conf)


def track_baseline(w: Waveform, grid: FrameGrid, cfg: TrackerConfig = TrackerConfig(),
                   observations=None, rms_db=None) -> BaselinePitchTrack:
    if observations is None or rms_db is None:
        observations, rms_db = analyze_pitch(w, grid, cfg)
    conf = np.array([o.confidence for o in observations])
    f0 = np.exp(np.array([o.log_f0 for o in observations]))
    voiced = (conf >= cfg.voicing_threshold) & (np.asarray(rms_db) >= cfg.energy_floor_db) & np.isfinite(f0)
    # parabolic refinement can land a hair outside the lag range
    f0 = np.clip(f0, cfg.f_min, cfg.f_max)
    return BaselinePitchTrack(voiced, np.where(voiced, f0, np.nan), grid, confidence=conf)
