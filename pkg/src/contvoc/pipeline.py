"""Whole-utterance analysis and synthesis for both vocoders."""

from __future__ import annotations

from dataclasses import dataclass

from .config import PipelineConfig
from .mgc import analyze_mgc
from .mvf import estimate_mvf
from .pitch import analyze_pitch, track_baseline, track_continuous
from .synth import (
    BaselineVocoderParams,
    ContinuousVocoderParams,
    extract_residual_prototype,
    synthesize_baseline,
    synthesize_continuous,
)
from .tracks import FrameGrid, ResidualPrototype, Waveform


@dataclass
class AnalysisResult:
    params: ContinuousVocoderParams
    prototype: ResidualPrototype
    unconverged_frames: int = 0


def utterance_grid(w: Waveform, cfg: PipelineConfig) -> FrameGrid:
    hop = cfg.grid_for(0).frame_shift_samples
    return FrameGrid(hop, -(-len(w) // hop), w.sample_rate)


def analyze_continuous(w: Waveform, cfg: PipelineConfig = PipelineConfig(),
                       grid: FrameGrid | None = None) -> AnalysisResult:
    grid = grid or utterance_grid(w, cfg)
    contf0 = track_continuous(w, grid, cfg.tracker)
    mvf = estimate_mvf(w, contf0, grid, cfg.mvf)
    mgc, unconverged = analyze_mgc(w, grid, cfg.mgc)
    proto = extract_residual_prototype(w, contf0, mgc, min_confidence=cfg.prototype_confidence)
    return AnalysisResult(ContinuousVocoderParams(contf0, mvf, mgc), proto, unconverged)


def analyze_baseline(w: Waveform, cfg: PipelineConfig = PipelineConfig(),
                     grid: FrameGrid | None = None) -> BaselineVocoderParams:
    grid = grid or utterance_grid(w, cfg)
    obs, rms_db = analyze_pitch(w, grid, cfg.tracker)
    pitch = track_baseline(w, grid, cfg.tracker, observations=obs, rms_db=rms_db)
    mgc, _ = analyze_mgc(w, grid, cfg.mgc)
    return BaselineVocoderParams(pitch, mgc)


def copy_synthesize(w: Waveform, cfg: PipelineConfig = PipelineConfig()) -> Waveform:
    """Analyze then resynthesize with the continuous vocoder, trimmed to ``len(w)``."""
    res = analyze_continuous(w, cfg)
    y = synthesize_continuous(res.params, res.prototype, cfg.noise_seed, cfg.noise_gain)
    return Waveform(y.samples[:len(w)], w.sample_rate)


def copy_synthesize_baseline(w: Waveform, cfg: PipelineConfig = PipelineConfig()) -> Waveform:
    p = analyze_baseline(w, cfg)
    y = synthesize_baseline(p, cfg.noise_seed)
    return Waveform(y.samples[:len(w)], w.sample_rate)
