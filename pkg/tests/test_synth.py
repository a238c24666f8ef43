import math

import numpy as np
import pytest
from scipy.signal import get_window

from contvoc.config import PipelineConfig
from contvoc.errors import GridMismatchError
from contvoc.mgc import SILENT_LOG_GAIN, analyze_mgc, flat_lsp, mglsa_synthesize
from contvoc.mvf import harmonic_scores
from contvoc.pipeline import analyze_baseline, analyze_continuous, copy_synthesize, copy_synthesize_baseline
from contvoc.pitch import analyze_pitch, track_baseline, track_continuous
from contvoc.synth import (
    PEAK_LEVEL,
    BaselineVocoderParams,
    ContinuousVocoderParams,
    apply_mvf_split,
    baseline_excitation,
    extract_residual_prototype,
    fallback_prototype,
    pitch_marks,
    sample_f0,
    synth_voiced_excitation,
    synthesize_baseline,
    synthesize_continuous,
)
from contvoc.synthetic import alternating_stimulus, ar_filter, ar_pulse_train, white_noise
from contvoc.tracks import (
    BaselinePitchTrack,
    ContinuousPitchTrack,
    FrameGrid,
    MgcLspTrack,
    MvfTrack,
    ResidualPrototype,
    Waveform,
)

from conftest import SR

CFG = PipelineConfig()
FRAMES = 80
GRID = FrameGrid(270, FRAMES, SR)


def constant(value, frames=FRAMES):
    return np.full(frames, float(value))


def flat_mgc(grid=GRID, gain=0.0):
    return MgcLspTrack(np.full(grid.frame_count, gain), np.tile(flat_lsp(24), (grid.frame_count, 1)), grid)


def continuous_params(f0=122.5, mvf=SR / 2, grid=GRID, mgc=None):
    n = grid.frame_count
    return ContinuousVocoderParams(ContinuousPitchTrack(constant(f0, n), grid), MvfTrack(constant(mvf, n), grid),
                                   mgc or flat_mgc(grid))


def snr_db(ref, test):
    return 10 * np.log10(np.sum((test - ref) ** 2) / np.sum(ref ** 2))


# --- pitch marks and voiced excitation ----------------------------------------------


def test_marks_at_122_5_hz_are_180_apart():
    marks = pitch_marks(sample_f0(constant(122.5), GRID), SR)
    np.testing.assert_array_equal(np.diff(marks), 180.0)
    assert marks[0] == 0.0


def test_doubling_f0_doubles_marks():
    for f0 in (97.0, 122.5, 181.3):
        n1 = pitch_marks(sample_f0(constant(f0), GRID), SR).size
        n2 = pitch_marks(sample_f0(constant(2 * f0), GRID), SR).size
        assert abs(n2 - 2 * n1) <= 1


def test_marks_follow_a_glide():
    f0 = np.linspace(100, 200, FRAMES)
    marks = pitch_marks(sample_f0(f0, GRID), SR)
    # each step is one local period at the mark it leaves
    local = sample_f0(f0, GRID)[marks[:-1].astype(int)]
    np.testing.assert_allclose(np.diff(marks), SR / local, rtol=2e-3)


def test_excitation_fundamental_matches_f0():
    f0 = 137.0
    proto = fallback_prototype(int(round(SR / f0)))
    x = synth_voiced_excitation(ContinuousPitchTrack(constant(f0), GRID), proto)
    assert x.size == GRID.duration_samples
    nfft = 1 << 18
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size), nfft))
    freqs = np.fft.rfftfreq(nfft, 1 / SR)
    band = (freqs > 60) & (freqs < 250)
    assert abs(freqs[band][np.argmax(spec[band])] - f0) < 1.0


def test_excitation_near_unit_power():
    proto = fallback_prototype(180)
    x = synth_voiced_excitation(ContinuousPitchTrack(constant(122.5), GRID), proto)
    assert 0.8 < np.mean(x[500:-500] ** 2) < 1.2


# --- MVF split ---------------------------------------------------------------------


def test_split_at_nyquist_is_transparent(rng):
    v = rng.standard_normal(GRID.duration_samples)
    out = apply_mvf_split(v, MvfTrack(constant(SR / 2), GRID), GRID, noise_seed=1)
    assert snr_db(v, out) < -50


def test_split_at_floor_is_noise_above_1khz():
    v = synth_voiced_excitation(ContinuousPitchTrack(constant(122.5), GRID), fallback_prototype(180))
    mvf = MvfTrack(constant(300.0), GRID)
    full = apply_mvf_split(v, mvf, GRID, noise_seed=3)
    leak = apply_mvf_split(v, mvf, GRID, noise_seed=3, noise_gain=0.0)
    freqs = np.fft.rfftfreq(v.size, 1 / SR)
    hi = freqs > 1000
    total = np.sum(np.abs(np.fft.rfft(full)[hi]) ** 2)
    voiced = np.sum(np.abs(np.fft.rfft(leak)[hi]) ** 2)
    assert 1 - voiced / total >= 0.99


def test_split_is_deterministic(rng):
    v = rng.standard_normal(GRID.duration_samples)
    mvf = MvfTrack(rng.uniform(300, 8000, FRAMES), GRID)
    a = apply_mvf_split(v, mvf, GRID, noise_seed=7)
    b = apply_mvf_split(v, mvf, GRID, noise_seed=7)
    c = apply_mvf_split(v, mvf, GRID, noise_seed=8)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_split_grid_mismatch():
    with pytest.raises(GridMismatchError):
        apply_mvf_split(np.zeros(100), MvfTrack(constant(300.0), GRID), GRID)


# --- continuous synthesis -------------------------------------------------------------


def test_output_peak_and_length(rng):
    p = continuous_params(mgc=MgcLspTrack(rng.normal(-2, 0.3, FRAMES), np.tile(flat_lsp(24), (FRAMES, 1)), GRID))
    y = synthesize_continuous(p, fallback_prototype(180), noise_seed=0)
    assert len(y) == GRID.duration_samples
    assert np.max(np.abs(y.samples)) == pytest.approx(PEAK_LEVEL, abs=1e-12)


def test_continuous_synthesis_is_deterministic():
    p = continuous_params(mvf=2000.0)
    a = synthesize_continuous(p, fallback_prototype(180), noise_seed=5).samples
    b = synthesize_continuous(p, fallback_prototype(180), noise_seed=5).samples
    np.testing.assert_array_equal(a, b)


def test_continuous_path_has_no_voicing_branch():
    # contf0 and mvf alone drive synthesis; any valid values synthesize
    rng = np.random.default_rng(11)
    p = ContinuousVocoderParams(ContinuousPitchTrack(rng.uniform(50, 400, FRAMES), GRID),
                                MvfTrack(rng.uniform(300, SR / 2, FRAMES), GRID), flat_mgc())
    y = synthesize_continuous(p, fallback_prototype(100))
    assert np.all(np.isfinite(y.samples))


def test_floor_mvf_output_has_no_harmonics_above_1khz():
    w = ar_pulse_train(120, 1.0)
    res = analyze_continuous(w, CFG)
    p = res.params
    floored = ContinuousVocoderParams(p.contf0, MvfTrack(np.full(p.grid.frame_count, 300.0), p.grid), p.mgc)
    y = synthesize_continuous(floored, res.prototype, noise_seed=1).samples
    hop = p.grid.frame_shift_samples
    means = []
    for i in range(10, p.grid.frame_count - 10, 4):
        f0 = p.contf0.contf0[i]
        rows = harmonic_scores(y[i * hop - 1024:i * hop + 1024], SR, f0)
        means.append(rows[rows[:, 0] > 1000, 1].mean())
    assert np.mean(means) < 6.0


def test_raising_mvf_keeps_low_band_harmonics():
    w = ar_pulse_train(120, 1.0)
    res = analyze_continuous(w, CFG)
    p = res.params
    n = p.grid.frame_count

    def low_band_score(cutoff):
        q = ContinuousVocoderParams(p.contf0, MvfTrack(np.full(n, cutoff), p.grid), p.mgc)
        y = synthesize_continuous(q, res.prototype, noise_seed=1).samples
        hop = p.grid.frame_shift_samples
        scores = []
        for i in range(10, n - 10, 4):
            rows = harmonic_scores(y[i * hop - 1024:i * hop + 1024], SR, p.contf0.contf0[i])
            scores.append(rows[rows[:, 0] < 1500, 1].mean())
        return np.mean(scores)

    base = low_band_score(1500.0)
    assert low_band_score(4000.0) >= base - 0.5
    assert low_band_score(SR / 2) >= base - 0.5


def test_energy_locality(rng):
    p = continuous_params(mvf=3000.0)
    gains = np.full(FRAMES, -1.0)
    lsp = np.tile(flat_lsp(24), (FRAMES, 1))
    ref = synthesize_continuous(
        ContinuousVocoderParams(p.contf0, p.mvf, MgcLspTrack(gains, lsp, GRID)), fallback_prototype(180),
        normalize=False).samples
    a, b = 30, 45
    zeroed = gains.copy()
    zeroed[a:b] = SILENT_LOG_GAIN
    out = synthesize_continuous(
        ContinuousVocoderParams(p.contf0, p.mvf, MgcLspTrack(zeroed, lsp, GRID)), fallback_prototype(180),
        normalize=False).samples
    hop = GRID.frame_shift_samples

    def level(x, lo, hi):
        return 10 * np.log10(np.mean(x[lo * hop:hi * hop] ** 2))

    assert level(ref, a, b) - level(out, a, b) >= 20
    for lo, hi in [(0, a - 1), (b, FRAMES)]:
        assert abs(level(ref, lo, hi) - level(out, lo, hi)) <= 1.0


def test_copy_synthesis_retracks_within_5hz():
    w = ar_pulse_train(120, 1.0)
    y = copy_synthesize(w, CFG)
    assert len(y) == len(w)
    grid = FrameGrid(CFG.grid_for(0).frame_shift_samples, len(w) // 270, SR)
    ref = track_continuous(w, grid, CFG.tracker)
    out = track_continuous(y, grid, CFG.tracker)
    good = (ref.confidence > 0.9) & (out.confidence > 0.9)
    assert good.sum() > grid.frame_count // 2
    assert np.sqrt(np.mean((ref.contf0[good] - out.contf0[good]) ** 2)) < 5.0


# --- residual prototype --------------------------------------------------------------


def planted_template(nominal=184):
    t = np.arange(2 * nominal)
    shape = -np.exp(-((t - nominal) / 6.0) ** 2) + 0.3 * np.exp(-((t - nominal - 16) / 20.0) ** 2)
    shape *= get_window("hann", 2 * nominal)
    return shape / np.sqrt(np.mean(shape ** 2))


def test_prototype_recovers_planted_template():
    tmpl = planted_template()
    n = 2 * SR
    grid = FrameGrid(270, -(-n // 270), SR)
    k = np.arange(grid.frame_count)
    contf0 = ContinuousPitchTrack(120.0 * (1 + 0.05 * np.sin(k / 10)), grid, confidence=np.ones(grid.frame_count))
    exc = synth_voiced_excitation(contf0, ResidualPrototype(tmpl, 184))
    # colour the template with an MGC envelope fitted to AR noise
    noise = ar_filter(np.random.default_rng(0).standard_normal(grid.duration_samples))
    env, _ = analyze_mgc(Waveform(noise / np.abs(noise).max(), SR), grid)
    y = mglsa_synthesize(exc, env)
    proto = extract_residual_prototype(y, contf0, env)
    assert not proto.fallback
    assert proto.samples.size == 2 * proto.nominal_period
    assert math.sqrt(np.mean(proto.samples ** 2)) == pytest.approx(1.0, abs=1e-6)
    resampled = np.interp(np.linspace(0, tmpl.size - 1, proto.samples.size), np.arange(tmpl.size), tmpl)
    corr = np.correlate(proto.samples, resampled, "full") / proto.samples.size
    assert corr.max() > 0.95


def test_noise_input_falls_back():
    w = white_noise(1.0, seed=3, level=0.1)
    grid = FrameGrid(270, -(-len(w) // 270), SR)
    contf0 = track_continuous(w, grid, CFG.tracker)
    mgc, _ = analyze_mgc(w, grid)
    proto = extract_residual_prototype(w, contf0, mgc)
    assert proto.fallback
    assert math.sqrt(np.mean(proto.samples ** 2)) == pytest.approx(1.0, abs=1e-6)


def test_extracted_prototype_contract():
    res = analyze_continuous(ar_pulse_train(140, 1.0), CFG)
    proto = res.prototype
    assert not proto.fallback
    assert proto.samples.size == 2 * proto.nominal_period
    assert abs(proto.nominal_period - SR / 140) <= 1
    assert math.sqrt(np.mean(proto.samples ** 2)) == pytest.approx(1.0, abs=1e-6)
    assert proto.samples[np.argmax(np.abs(proto.samples))] < 0


def test_fallback_prototype_is_deterministic():
    a, b = fallback_prototype(150), fallback_prototype(150)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.fallback and a.samples.size == 300


# --- baseline vocoder --------------------------------------------------------------------


def test_baseline_unvoiced_is_seeded_noise():
    pitch = BaselinePitchTrack(voiced=np.zeros(FRAMES, bool), f0=np.full(FRAMES, np.nan), grid=GRID)
    exc = baseline_excitation(pitch, noise_seed=4)
    np.testing.assert_array_equal(exc, np.random.default_rng(4).standard_normal(GRID.duration_samples))


def test_baseline_voiced_pulses_180_apart():
    pitch = BaselinePitchTrack(voiced=np.ones(FRAMES, bool), f0=constant(122.5), grid=GRID)
    exc = baseline_excitation(pitch)
    marks = np.flatnonzero(exc)
    np.testing.assert_array_equal(np.diff(marks), 180)
    # unit power: height sqrt(T) once per period T
    assert np.mean(exc[: marks[-1]] ** 2) == pytest.approx(1.0, rel=0.01)


def test_baseline_synthesis_deterministic_and_normalized():
    voiced = np.arange(FRAMES) % 20 < 12
    pitch = BaselinePitchTrack(voiced=voiced, f0=np.where(voiced, 130.0, np.nan), grid=GRID)
    p = BaselineVocoderParams(pitch, flat_mgc(gain=-1.0))
    a = synthesize_baseline(p, noise_seed=2).samples
    np.testing.assert_array_equal(a, synthesize_baseline(p, noise_seed=2).samples)
    assert np.max(np.abs(a)) == pytest.approx(PEAK_LEVEL, abs=1e-12)


def test_baseline_copy_synthesis_keeps_voicing():
    w, voiced_at = alternating_stimulus(120.0, 0.25, 8, seed=0)
    y = copy_synthesize_baseline(w, CFG)
    grid = FrameGrid(270, len(w) // 270, SR)
    ref = track_baseline(w, grid, CFG.tracker)
    out = track_baseline(y, grid, CFG.tracker)
    truth = voiced_at(grid.times())
    # frames within three hops of a segment boundary are ambiguous
    boundary = np.zeros(grid.frame_count, bool)
    idx = np.flatnonzero(np.diff(truth.astype(int)) != 0)
    for i in idx:
        boundary[max(0, i - 3):i + 4] = True
    keep = ~boundary
    assert np.mean(ref.voiced[keep] == out.voiced[keep]) >= 0.9


def test_baseline_analysis_shares_grid():
    p = analyze_baseline(ar_pulse_train(120, 0.5), CFG)
    assert p.pitch.grid == p.mgc.grid
    obs, _ = analyze_pitch(ar_pulse_train(120, 0.5), p.grid, CFG.tracker)
    assert len(obs) == p.grid.frame_count
