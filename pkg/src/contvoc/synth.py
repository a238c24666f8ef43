"""Excitation generation and synthesis for the continuous and baseline vocoders.

The continuous vocoder overlap-adds a two-period residual prototype at pitch
marks integrated from ContF0, swaps everything above the MVF for noise, and
filters the result through MGLSA. Nothing in that path asks whether a frame
is voiced: an unvoiced frame is just one whose MVF sits at the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .errors import GridMismatchError
from .mgc import mglsa_inverse, mglsa_synthesize
from .tracks import (
    BaselinePitchTrack,
    ContinuousPitchTrack,
    FrameGrid,
    MgcLspTrack,
    MvfTrack,
    ResidualPrototype,
    Waveform,
    check_same_grid,
)

PEAK_LEVEL = 0.99


@dataclass
class ContinuousVocoderParams:
    contf0: ContinuousPitchTrack
    mvf: MvfTrack
    mgc: MgcLspTrack
    repaired_frames: int = 0

    def __post_init__(self):
        self.grid = check_same_grid(self.contf0.grid, self.mvf.grid, self.mgc.grid)


@dataclass
class BaselineVocoderParams:
    pitch: BaselinePitchTrack
    mgc: MgcLspTrack
    repaired_frames: int = 0

    def __post_init__(self):
        self.grid = check_same_grid(self.pitch.grid, self.mgc.grid)


def _periodic_hann(n: int) -> np.ndarray:
    return get_window("hann", n, fftbins=True)


def sample_f0(f0_frames, grid: FrameGrid) -> np.ndarray:
    """Per-sample F0, linear between frame centres and held past the ends."""
    centres = np.arange(grid.frame_count) * grid.frame_shift_samples
    return np.interp(np.arange(grid.duration_samples), centres, np.asarray(f0_frames, dtype=np.float64))


def pitch_marks(f0_samples: np.ndarray, sample_rate: int) -> np.ndarray:
    """Fractional mark positions: start at 0, step by one local period."""
    n = f0_samples.size
    marks = []
    t = 0.0
    while t < n:
        marks.append(t)
        # f0 at a fractional position, interpolated between neighbouring samples
        i = int(t)
        frac = t - i
        f = f0_samples[i] if i + 1 >= n else (1 - frac) * f0_samples[i] + frac * f0_samples[i + 1]
        t += sample_rate / f
    return np.asarray(marks)


def _place(out: np.ndarray, shape: np.ndarray, mark: float, period: float, amplitude: float = 1.0):
    """Overlap-add ``shape`` (two periods long) stretched over ``[mark - period, mark + period)``."""
    lo = max(0, int(math.ceil(mark - period)))
    hi = min(out.size, int(math.ceil(mark + period)))
    if hi <= lo:
        return
    pos = (np.arange(lo, hi) - (mark - period)) * (shape.size / (2 * period))
    out[lo:hi] += amplitude * np.interp(pos, np.arange(shape.size), shape, left=0.0, right=0.0)


def synth_voiced_excitation(contf0: ContinuousPitchTrack, proto: ResidualPrototype,
                            grid: FrameGrid | None = None) -> np.ndarray:
    """Pitch-synchronous overlap-add of the prototype along ContF0.

    Each mark gets the prototype resampled to two local periods. Successive
    copies overlap by one period, so the periodic-Hann taper of the
    prototype sums to a constant; the ``1/sqrt(2)`` keeps the excitation
    near unit power, matching the white-noise assumption behind MGC gain.
    """
    grid = grid or contf0.grid
    check_same_grid(contf0.grid, grid)
    f0 = sample_f0(contf0.contf0, grid)
    out = np.zeros(grid.duration_samples)
    if out.size == 0:
        return out
    sr = grid.sample_rate
    shape = proto.samples / math.sqrt(2.0)
    for m in pitch_marks(f0, sr):
        _place(out, shape, m, sr / f0[int(m)])
    return out


def apply_mvf_split(voiced, mvf: MvfTrack, grid: FrameGrid | None = None, noise_seed: int = 0,
                    noise_gain: float = 1.0) -> np.ndarray:
    """Low-pass ``voiced`` at the MVF and fill the band above with noise.

    Frames are two hops long, centred on every frame instant, with
    square-root periodic Hann windows for analysis and synthesis, so the
    split reconstructs ``voiced`` exactly when MVF is at Nyquist. The noise is
    unit-variance white noise scaled by the voiced frame's RMS and
    ``noise_gain`` before high-passing.
    """
    grid = grid or mvf.grid
    check_same_grid(mvf.grid, grid)
    x = np.asarray(voiced, dtype=np.float64).reshape(-1)
    if x.size != grid.duration_samples:
        raise GridMismatchError(f"voiced signal has {x.size} samples; grid spans {grid.duration_samples}")
    hop = grid.frame_shift_samples
    n_frames = grid.frame_count
    if n_frames == 0:
        return x.copy()
    length = 2 * hop
    win = np.sqrt(_periodic_hann(length))
    padded = np.pad(x, hop)
    noise = np.random.default_rng(noise_seed).standard_normal(padded.size)
    freqs = np.fft.rfftfreq(length, 1.0 / grid.sample_rate)
    out = np.zeros(padded.size)
    for j in range(n_frames + 1):
        cutoff = mvf.mvf[min(j, n_frames - 1)]
        start = j * hop
        seg = padded[start:start + length]
        low = np.fft.rfft(seg * win)
        low[freqs > cutoff] = 0.0
        level = noise_gain * math.sqrt(np.mean(seg ** 2))
        high = np.fft.rfft(noise[start:start + length] * win) * level
        high[freqs <= cutoff] = 0.0
        out[start:start + length] += win * np.fft.irfft(low + high, length)
    return out[hop:hop + x.size]


def _normalize(samples: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    return samples * (PEAK_LEVEL / peak) if peak > 0 else samples


def synthesize_continuous(p: ContinuousVocoderParams, proto: ResidualPrototype, noise_seed: int = 0,
                          noise_gain: float = 1.0, normalize: bool = True) -> Waveform:
    voiced = synth_voiced_excitation(p.contf0, proto, p.grid)
    excitation = apply_mvf_split(voiced, p.mvf, p.grid, noise_seed, noise_gain)
    y = mglsa_synthesize(excitation, p.mgc).samples
    return Waveform(_normalize(y) if normalize else y, p.grid.sample_rate)


def baseline_excitation(pitch: BaselinePitchTrack, noise_seed: int = 0) -> np.ndarray:
    """Unit-power pulse train on voiced frames, unit-variance noise elsewhere.

    A pulse of height ``sqrt(T)`` every ``T`` samples carries unit power, so
    the two sources are level-matched across voicing boundaries.
    """
    grid = pitch.grid
    n = grid.duration_samples
    rng = np.random.default_rng(noise_seed)
    noise = rng.standard_normal(n)
    if grid.frame_count == 0:
        return noise
    hop = grid.frame_shift_samples
    frame_of = np.minimum((np.arange(n) + hop // 2) // hop, grid.frame_count - 1)
    voiced = pitch.voiced[frame_of]
    out = np.where(voiced, 0.0, noise)
    if not pitch.voiced.any():
        return out
    # unvoiced gaps carry the neighbouring voiced F0 so mark integration never stalls
    idx = np.flatnonzero(pitch.voiced)
    f0_frames = np.interp(np.arange(grid.frame_count), idx, pitch.f0[idx])
    f0 = sample_f0(f0_frames, grid)
    for m in pitch_marks(f0, grid.sample_rate):
        i = int(round(m))
        if i < n and voiced[i]:
            out[i] += math.sqrt(grid.sample_rate / f0[int(m)])
    return out


def synthesize_baseline(p: BaselineVocoderParams, noise_seed: int = 0, normalize: bool = True) -> Waveform:
    y = mglsa_synthesize(baseline_excitation(p.pitch, noise_seed), p.mgc).samples
    return Waveform(_normalize(y) if normalize else y, p.grid.sample_rate)


# --- residual prototype ---------------------------------------------------------


def fallback_prototype(nominal_period: int) -> ResidualPrototype:
    """Deterministic band-limited negative pulse over two periods."""
    n = np.arange(2 * nominal_period)
    shape = -np.sinc(0.9 * (n - nominal_period)) * _periodic_hann(2 * nominal_period)
    shape /= math.sqrt(np.mean(shape ** 2))
    return ResidualPrototype(shape, nominal_period, fallback=True)


def _find_marks(residual: np.ndarray, f0: np.ndarray, usable: np.ndarray, sample_rate: int) -> list[int]:
    """Residual minima chained one predicted period apart through usable samples."""
    marks = []
    n = residual.size
    t = 0
    while t < n:
        if not usable[t]:
            t += 1
            continue
        period = sample_rate / f0[t]
        if not marks or t - marks[-1] > 1.5 * period:
            # entering a voiced stretch: anchor on the deepest minimum of one period
            hi = min(n, t + int(math.ceil(period)))
            m = t + int(np.argmin(residual[t:hi]))
        else:
            lo = marks[-1] + int(0.8 * period)
            hi = min(n, marks[-1] + int(math.ceil(1.2 * period)) + 1)
            if lo >= n:
                break
            m = lo + int(np.argmin(residual[lo:hi]))
        if usable[m] and (not marks or m > marks[-1]):
            marks.append(m)
        t = m + max(1, int(0.8 * period))
    return marks


def extract_residual_prototype(w: Waveform, contf0: ContinuousPitchTrack, mgc: MgcLspTrack,
                               confidence=None, min_frames: int = 30, min_confidence: float = 0.6,
                               max_snippets: int = 2000) -> ResidualPrototype:
    """First principal component of pitch-synchronous residual snippets.

    The waveform is inverse-filtered with ``mgc``; pitch marks are chained
    residual minima restricted to frames whose tracker confidence exceeds
    ``min_confidence``. Each two-period snippet around a mark is resampled
    to ``2 * nominal_period`` samples (the median-F0 period) and
    Hann-tapered. The returned shape is the leading right singular vector of
    the uncentred snippet matrix, scaled to unit RMS with its largest
    excursion negative.

    Too little confident material yields :func:`fallback_prototype` rather
    than an error.
    """
    grid = check_same_grid(contf0.grid, mgc.grid)
    if confidence is None:
        confidence = contf0.confidence
    conf = np.zeros(grid.frame_count) if confidence is None else np.asarray(confidence, dtype=np.float64)
    if conf.size != grid.frame_count:
        raise GridMismatchError("confidence length differs from grid frame_count")
    sr = grid.sample_rate
    good = conf > min_confidence
    ref_f0 = np.median(contf0.contf0[good]) if good.any() else np.median(contf0.contf0)
    nominal = max(2, int(round(sr / ref_f0)))
    if good.sum() < min_frames:
        return fallback_prototype(nominal)

    n = grid.duration_samples
    x = np.zeros(n)
    m = min(n, len(w))
    x[:m] = w.samples[:m]
    residual = mglsa_inverse(x, mgc)
    hop = grid.frame_shift_samples
    frame_of = np.minimum((np.arange(n) + hop // 2) // hop, grid.frame_count - 1)
    usable = good[frame_of]
    # the marks sit on the dominant excursion, whichever its polarity
    if np.max(residual[usable]) > -np.min(residual[usable]):
        residual = -residual
    f0 = sample_f0(contf0.contf0, grid)
    marks = _find_marks(residual, f0, usable, sr)

    length = 2 * nominal
    taper = _periodic_hann(length)
    grid_idx = np.arange(n)
    snippets = []
    for mk in marks:
        period = sr / f0[mk]
        if mk - period < 0 or mk + period > n - 1:
            continue
        pos = mk - period + np.arange(length) * (2 * period / length)
        snippets.append(np.interp(pos, grid_idx, residual) * taper)
    if len(snippets) < 10:
        return fallback_prototype(nominal)
    mat = np.asarray(snippets)
    if mat.shape[0] > max_snippets:
        mat = mat[np.linspace(0, mat.shape[0] - 1, max_snippets).round().astype(int)]
    _, _, vt = np.linalg.svd(mat, full_matrices=False)
    shape = vt[0]
    rms = math.sqrt(np.mean(shape ** 2))
    if not rms > 0:
        return fallback_prototype(nominal)
    shape = shape / rms
    if shape[np.argmax(np.abs(shape))] > 0:
        shape = -shape
    return ResidualPrototype(shape, nominal)
