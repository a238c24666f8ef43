"""Continuous vocoder analysis/synthesis and single-frame CNN mapping from ultrasound to vocoder parameters."""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .errors import ContVocError, IoError, ValidationError
from .tracks import (
    BaselinePitchTrack,
    ContinuousPitchTrack,
    FrameGrid,
    MgcLspTrack,
    MvfTrack,
    UltrasoundSequence,
    Waveform,
)

__all__ = [
    "BaselinePitchTrack",
    "ContVocError",
    "ContinuousPitchTrack",
    "FrameGrid",
    "IoError",
    "MgcLspTrack",
    "MvfTrack",
    "PipelineConfig",
    "UltrasoundSequence",
    "ValidationError",
    "Waveform",
    "load_config",
]
