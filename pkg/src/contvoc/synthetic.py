"""Constructed test signals and a paired ultrasound/audio corpus generator.

The corpus images are not tongue images. Each frame is a smooth,
deterministic picture of that frame's generating parameters (Gaussian
ridges whose positions and brightness encode ContF0, MVF, gain and vowel
quality), so a small CNN has something learnable. It is a fixture for
end-to-end tests, not a physical model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .synth import apply_mvf_split, sample_f0
from .tracks import DEFAULT_SAMPLE_RATE, FrameGrid, MvfTrack, Waveform

# six resonances (Hz, bandwidth Hz) giving a fixed stable AR(12) envelope
FORMANTS = ((500, 80), (1500, 100), (2500, 120), (3500, 150), (4500, 200), (5500, 250))


def ar_coefficients(formants=FORMANTS, sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Denominator polynomial with one conjugate pole pair per ``(freq, bandwidth)``."""
    a = np.array([1.0])
    for freq, bw in formants:
        r = math.exp(-math.pi * bw / sample_rate)
        theta = 2 * math.pi * freq / sample_rate
        a = np.convolve(a, [1.0, -2 * r * math.cos(theta), r * r])
    return a


def pulse_positions(f0, n: int, sample_rate: int) -> np.ndarray:
    """Integer pulse positions integrated from a per-sample (or constant) F0."""
    f0 = np.broadcast_to(np.asarray(f0, dtype=np.float64), (n,))
    out = []
    t = 0.0
    while t < n:
        out.append(int(round(t)))
        t += sample_rate / f0[min(int(t), n - 1)]
    pos = np.asarray(out, dtype=int)
    return pos[pos < n]


def pulse_train(f0, duration: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    n = int(round(duration * sample_rate))
    x = np.zeros(n)
    x[pulse_positions(f0, n, sample_rate)] = 1.0
    return x


def ar_filter(x, a=None, sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    a = ar_coefficients(sample_rate=sample_rate) if a is None else a
    return lfilter([1.0], a, x)


def _finish(x: np.ndarray, sample_rate: int, peak: float = 0.9) -> Waveform:
    m = np.max(np.abs(x)) if x.size else 0.0
    return Waveform(x * (peak / m) if m > 0 else x, sample_rate)


def ar_pulse_train(f0=120.0, duration: float = 1.0, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    return _finish(ar_filter(pulse_train(f0, duration, sample_rate), sample_rate=sample_rate), sample_rate)


def chirp_pulse_train(f_start=100.0, f_end=200.0, duration: float = 1.0,
                      sample_rate: int = DEFAULT_SAMPLE_RATE):
    """AR-filtered pulse train with linearly rising F0; returns ``(wave, f0_of_time)``."""
    n = int(round(duration * sample_rate))
    f0 = f_start + (f_end - f_start) * np.arange(n) / n
    x = ar_filter(pulse_train(f0, duration, sample_rate), sample_rate=sample_rate)

    def f0_at(t):
        return f_start + (f_end - f_start) * np.clip(np.asarray(t) / duration, 0, 1)

    return _finish(x, sample_rate), f0_at


def alternating_stimulus(f0=120.0, segment: float = 0.25, segments: int = 8, seed: int = 0,
                         sample_rate: int = DEFAULT_SAMPLE_RATE):
    """Voiced pulse segments alternating with white-noise segments.

    Returns ``(wave, voiced_of_time)``; segment 0 is voiced. Noise is
    level-matched to the AR-filtered pulses.
    """
    rng = np.random.default_rng(seed)
    n_seg = int(round(segment * sample_rate))
    parts = []
    voiced_part = ar_filter(pulse_train(f0, segment, sample_rate), sample_rate=sample_rate)
    level = math.sqrt(np.mean(voiced_part ** 2))
    for k in range(segments):
        if k % 2 == 0:
            parts.append(voiced_part[:n_seg])
        else:
            parts.append(level * rng.standard_normal(n_seg))
    x = np.concatenate(parts)

    def voiced_at(t):
        return (np.floor(np.asarray(t) / segment).astype(int) % 2) == 0

    return _finish(x, sample_rate), voiced_at


def two_band_stimulus(f0=150.0, boundary=3000.0, duration: float = 1.0, noise_ratio: float = 1.0,
                      seed: int = 0, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Harmonics of ``f0`` up to ``boundary`` plus noise above it.

    With ``noise_ratio = 1`` both bands carry equal power.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    k_max = int(boundary // f0)
    harm = np.zeros(n)
    for k in range(1, k_max + 1):
        harm += np.cos(2 * math.pi * k * f0 * t + rng.uniform(0, 2 * math.pi))
    spec = np.fft.rfft(rng.standard_normal(n))
    spec[np.fft.rfftfreq(n, 1 / sample_rate) < boundary] = 0
    noise = np.fft.irfft(spec, n)
    noise *= math.sqrt(noise_ratio * np.mean(harm ** 2) / np.mean(noise ** 2))
    return _finish(harm + noise, sample_rate)


def white_noise(duration: float = 1.0, seed: int = 0, level: float = 0.3,
                sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    rng = np.random.default_rng(seed)
    return Waveform(level * rng.standard_normal(int(round(duration * sample_rate))), sample_rate)


def random_stimulus(rng: np.random.Generator, sample_rate: int = DEFAULT_SAMPLE_RATE):
    """One of several random test signals; returns ``(wave, longest_silence_seconds)``."""
    kind = rng.integers(5)
    dur = float(rng.uniform(0.4, 1.2))
    n = int(dur * sample_rate)
    if kind == 0:
        return Waveform(np.zeros(n), sample_rate), dur
    if kind == 1:
        return white_noise(dur, int(rng.integers(1 << 30)), sample_rate=sample_rate), 0.0
    f0 = float(rng.uniform(90, 300))
    x = ar_filter(pulse_train(f0, dur, sample_rate), sample_rate=sample_rate)
    x /= np.max(np.abs(x))
    silence = 0.0
    if kind >= 3:
        silence = float(rng.uniform(0.2, 0.4))
        start = int(rng.uniform(0.1, 0.4) * n)
        x = np.concatenate([x[:start], np.zeros(int(silence * sample_rate)), x[start:]])
    if kind == 4:
        x = x + 0.05 * rng.standard_normal(x.size)
    return Waveform(0.8 * x / np.max(np.abs(x)), sample_rate), silence


# --- paired ultrasound/audio corpus -------------------------------------------

VOWEL_A = (700, 1200, 2500, 3500, 4500, 5500)
VOWEL_B = (300, 2200, 2900, 3700, 4600, 5600)
_BANDWIDTHS = (110, 120, 140, 160, 200, 250)
IMAGE_HEIGHT = 64
IMAGE_WIDTH = 128
F0_RANGE = (70.0, 320.0)


@dataclass
class GeneratedUtterance:
    """Generating parameters of one corpus utterance, one value per frame."""

    name: str
    contf0: np.ndarray
    voiced: np.ndarray
    irregular: np.ndarray
    mvf: np.ndarray
    gain: np.ndarray
    vowel: np.ndarray
    wave: Waveform
    images: np.ndarray


def _smooth_walk(rng, n: int, step: float, smooth: int = 8) -> np.ndarray:
    walk = np.cumsum(rng.normal(0.0, step, n + smooth))
    kernel = np.hanning(smooth + 2)[1:-1]
    return np.convolve(walk, kernel / kernel.sum(), mode="valid")[:n]


def _ridge(pos: float, length: int, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((np.arange(length) - pos) / sigma) ** 2)


def _scale(value, lo, hi) -> np.ndarray:
    return (np.log(value) - math.log(lo)) / (math.log(hi) - math.log(lo))


def render_frame(contf0: float, mvf: float, gain: float, vowel: float, nyquist: float,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """One 64x128 uint8 image whose ridges encode the frame's parameters.

    Left half: a horizontal ridge whose row tracks log ContF0 and whose
    brightness tracks gain. Right half: a horizontal ridge whose row tracks
    log MVF. A vertical ridge's column tracks the vowel morph.
    """
    h, w = IMAGE_HEIGHT, IMAGE_WIDTH
    img = np.zeros((h, w))
    half = w // 2
    f_row = 4 + (h - 8) * float(np.clip(_scale(contf0, *F0_RANGE), 0, 1))
    img[:, :half] += (0.4 + 0.6 * gain) * _ridge(f_row, h, 2.0)[:, None]
    m_row = 4 + (h - 8) * float(np.clip(_scale(mvf, 300.0, nyquist), 0, 1))
    img[:, half:] += _ridge(m_row, h, 2.5)[:, None]
    img += 0.5 * _ridge(8 + (w - 16) * vowel, w, 3.0)[None, :]
    if rng is not None:
        img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(np.round(255 * img / 1.6), 0, 255).astype(np.uint8)


def _bridge_gaps(contf0: np.ndarray, voiced: np.ndarray) -> np.ndarray:
    """Log-linear F0 across unvoiced stretches: the continuous contour has no other value there."""
    if voiced.all() or not voiced.any():
        return contf0
    idx = np.flatnonzero(voiced)
    return np.exp(np.interp(np.arange(contf0.size), idx, np.log(contf0[idx])))


def _irregular_frames(voiced: np.ndarray, rng, probability: float = 0.5) -> np.ndarray:
    """Voiced frames at voicing edges that get creaky phonation, 1 or 2 frames inward."""
    n = voiced.size
    out = np.zeros(n, dtype=bool)
    for i in np.flatnonzero(voiced):
        onset = i == 0 or not voiced[i - 1]
        offset = i == n - 1 or not voiced[i + 1]
        for inward, is_edge in ((1, onset), (-1, offset)):
            if is_edge and rng.random() < probability:
                span = int(rng.integers(1, 3))
                lo, hi = sorted((i, i + inward * (span - 1)))
                out[max(lo, 0):hi + 1] = True
    return out & voiced


def _source_filter(contf0, voiced, irregular, mvf, gain, vowel, hop, rng, sample_rate) -> np.ndarray:
    grid = FrameGrid(hop, contf0.size, sample_rate)
    n = grid.duration_samples
    f0 = sample_f0(contf0, grid)
    frame_of = np.minimum((np.arange(n) + hop // 2) // hop, grid.frame_count - 1)
    pulses = np.zeros(n)
    for k, p in enumerate(pulse_positions(f0, n, sample_rate)):
        amp = math.sqrt(sample_rate / f0[p])
        if irregular[frame_of[p]]:
            # diplophonia: every other glottal pulse weak and mistimed
            p = min(n - 1, max(0, p + int(round(rng.normal(0.0, 0.04) * sample_rate / f0[p]))))
            amp *= 0.3 if k % 2 else 1.0
        pulses[p] += amp
    mixed = apply_mvf_split(pulses, MvfTrack(mvf, grid), grid, int(rng.integers(1 << 31)))
    noise = rng.standard_normal(n)
    env = np.interp(np.arange(n), np.arange(contf0.size) * hop, gain)
    vflag = voiced[frame_of]
    source = np.where(vflag, mixed, 0.0) * env
    out = np.empty(n)
    zi = np.zeros(2 * len(VOWEL_A))
    for i in range(contf0.size):
        formants = [(a + vowel[i] * (b - a), bw) for a, b, bw in zip(VOWEL_A, VOWEL_B, _BANDWIDTHS)]
        a = ar_coefficients(formants, sample_rate)
        seg = slice(i * hop, (i + 1) * hop)
        out[seg], zi = lfilter([1.0], a, source[seg], zi=zi)
    # fricative noise is broadband with a high-frequency tilt, not shaped by the vowel
    fric = lfilter([1.0, -0.7], [1.0], np.where(vflag, 0.0, noise) * env)
    level = math.sqrt(np.mean(out[vflag] ** 2)) if vflag.any() else 1.0
    return out + 0.5 * level * fric


def generate_utterance(name: str, seed: int, index: int, duration: float = 0.4,
                       sample_rate: int = DEFAULT_SAMPLE_RATE, fps: float = 81.67) -> GeneratedUtterance:
    """Deterministic utterance ``index`` of a corpus drawn with ``seed``."""
    rng = np.random.default_rng([seed, index])
    hop = int(round(sample_rate / fps))
    n_frames = max(8, int(math.ceil(duration * sample_rate / hop)))
    nyquist = sample_rate / 2
    base = rng.uniform(110.0, 190.0)
    contf0 = np.clip(base * np.exp(_smooth_walk(rng, n_frames, 0.03)), 90.0, 260.0)
    voiced = np.ones(n_frames, dtype=bool)
    for _ in range(int(rng.integers(0, 3))):
        length = int(rng.integers(4, 10))
        start = int(rng.integers(0, max(1, n_frames - length)))
        voiced[start:start + length] = False
    contf0 = _bridge_gaps(contf0, voiced)
    irregular = _irregular_frames(voiced, rng)
    hi = rng.uniform(3500.0, 8000.0) * np.exp(_smooth_walk(rng, n_frames, 0.05))
    lo = rng.uniform(300.0, 900.0)
    mvf = np.clip(np.where(voiced, hi, lo), 300.0, nyquist)
    gain = np.clip(0.7 + _smooth_walk(rng, n_frames, 0.08), 0.2, 1.0)
    vowel = np.clip(rng.uniform(0.2, 0.8) + _smooth_walk(rng, n_frames, 0.08), 0.0, 1.0)
    x = _source_filter(contf0, voiced, irregular, mvf, gain, vowel, hop, rng, sample_rate)
    wave = _finish(x, sample_rate, peak=0.8)
    img_rng = np.random.default_rng([seed, index, 1])
    images = np.stack([render_frame(contf0[i], mvf[i], gain[i], vowel[i], nyquist, img_rng)
                       for i in range(n_frames)])
    return GeneratedUtterance(name, contf0, voiced, irregular, mvf, gain, vowel, wave, images)
