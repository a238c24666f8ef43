"""Input checks shared by the estimator wrappers and the command line."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShapeError, ValidationError
from .tracks import Waveform


def check_frames(frames, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Return ``frames`` as a (n, height, width) array, checking shape and finiteness.

    A single 2-D frame is promoted to a batch of one.
    """
    x = np.asarray(frames)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected (frames, height, width), got shape {x.shape}")
    if height is not None and width is not None and x.shape[1:] != (height, width):
        raise ShapeError(f"expected {height}x{width} frames, got {x.shape[1]}x{x.shape[2]}")
    if x.dtype != np.uint8 and not np.isfinite(x).all():
        raise NumericalError("frames contain NaN or infinity")
    return x


def check_targets(y, n: int) -> np.ndarray:
    t = np.asarray(y, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.ndim != 2 or t.shape[0] != n:
        raise ShapeError(f"expected {n} target rows, got shape {np.shape(y)}")
    if not np.isfinite(t).all():
        raise NumericalError("targets contain NaN or infinity")
    return t


def check_binary(y, n: int) -> np.ndarray:
    t = check_targets(y, n)
    if t.shape[1] != 1 or not np.isin(t, (0.0, 1.0)).all():
        raise ValidationError("classification targets must be a single column of 0/1 labels")
    return t


def check_waveform(w, sample_rate: int | None = None) -> Waveform:
    """Accept a :class:`Waveform` or a 1-D sample array (which then needs ``sample_rate``)."""
    if isinstance(w, Waveform):
        if sample_rate is not None and w.sample_rate != sample_rate:
            raise ValidationError(f"waveform is at {w.sample_rate} Hz, expected {sample_rate} Hz")
        return w
    if sample_rate is None:
        raise ValidationError("a bare sample array needs a sample rate")
    x = np.asarray(w, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected mono samples, got shape {x.shape}")
    return Waveform(x, sample_rate)


def check_fraction(name: str, value: float) -> float:
    if not 0.0 < value < 1.0:
        raise ValidationError(f"{name} must lie strictly between 0 and 1, got {value}")
    return float(value)
