"""Objective scores: V/UV accuracy, masked RMSE, trace export, spectral distortion."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyMaskError, GridMismatchError
from .io import atomic_open
from .tracks import BaselinePitchTrack, check_same_grid


def _voiced(track) -> np.ndarray:
    return np.asarray(track.voiced if hasattr(track, "voiced") else track, dtype=bool).reshape(-1)


def vuv_accuracy(ref, pred) -> float:
    """Percentage of frames whose voicing flags agree."""
    a, b = _voiced(ref), _voiced(pred)
    if a.size != b.size:
        raise GridMismatchError(f"frame counts differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise EmptyMaskError("no frames to compare")
    return 100.0 * np.count_nonzero(a == b) / a.size


def rmse(ref, pred, mask=None) -> float:
    r = np.asarray(ref, dtype=np.float64).reshape(-1)
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    if r.size != p.size:
        raise GridMismatchError(f"lengths differ: {r.size} vs {p.size}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.size != r.size:
            raise GridMismatchError("mask length differs from the tracks")
        r, p = r[mask], p[mask]
    if r.size == 0:
        raise EmptyMaskError("rmse over zero frames")
    # a correctly rounded sum makes the result independent of frame order
    return math.sqrt(math.fsum((r - p) ** 2) / r.size)


def f0_rmse(ref: BaselinePitchTrack, pred: BaselinePitchTrack, all_frames: bool = False) -> float:
    """Baseline F0 error on frames voiced in both tracks.

    With ``all_frames`` every frame counts and unvoiced frames read as 0 Hz.
    """
    if all_frames:
        return rmse(np.nan_to_num(ref.f0), np.nan_to_num(pred.f0))
    if ref.voiced.size != pred.voiced.size:
        raise GridMismatchError("frame counts differ")
    both = ref.voiced & pred.voiced
    return rmse(np.nan_to_num(ref.f0), np.nan_to_num(pred.f0), both)


# --- reports ------------------------------------------------------------------


@dataclass
class UtteranceScores:
    name: str
    frames: int
    vuv_accuracy: float | None = None
    f0_rmse: float | None = None
    f0_rmse_all_frames: float | None = None
    f0_frames: int = 0
    contf0_rmse: float | None = None
    mvf_rmse: float | None = None


@dataclass
class EvalReport:
    utterances: list = field(default_factory=list)

    def add(self, scores: UtteranceScores) -> None:
        self.utterances.append(scores)

    def aggregate(self) -> dict:
        """Frame-weighted pooling: RMSEs combine squared errors, accuracy combines counts."""
        out = {"frames": int(sum(u.frames for u in self.utterances))}

        def pooled(key, weight):
            items = [(getattr(u, key), weight(u)) for u in self.utterances if getattr(u, key) is not None]
            total = sum(w for _, w in items)
            if not items or total == 0:
                return None
            return items, total

        acc = pooled("vuv_accuracy", lambda u: u.frames)
        out["vuv_accuracy"] = None if acc is None else sum(v * w for v, w in acc[0]) / acc[1]
        for key, weight in (("f0_rmse", lambda u: u.f0_frames), ("f0_rmse_all_frames", lambda u: u.frames),
                            ("contf0_rmse", lambda u: u.frames), ("mvf_rmse", lambda u: u.frames)):
            got = pooled(key, weight)
            out[key] = None if got is None else math.sqrt(sum(v * v * w for v, w in got[0]) / got[1])
        out["f0_frames"] = int(sum(u.f0_frames for u in self.utterances))
        return out

    def to_dict(self) -> dict:
        return {"aggregate": self.aggregate(), "utterances": [asdict(u) for u in self.utterances]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        with atomic_open(path, "w") as fh:
            fh.write(self.to_json())


def score_utterance(name: str, ref: dict, pred: dict) -> UtteranceScores:
    """Compare whichever tracks both dicts hold (keys ``f0``, ``contf0``, ``mvf``)."""
    frames = None
    s = UtteranceScores(name, 0)
    if "f0" in ref and "f0" in pred:
        r, p = ref["f0"], pred["f0"]
        frames = r.grid.frame_count
        s.vuv_accuracy = vuv_accuracy(r, p)
        s.f0_rmse_all_frames = f0_rmse(r, p, all_frames=True)
        s.f0_frames = int(np.count_nonzero(r.voiced & p.voiced))
        if s.f0_frames:
            s.f0_rmse = f0_rmse(r, p)
    if "contf0" in ref and "contf0" in pred:
        s.contf0_rmse = rmse(ref["contf0"].contf0, pred["contf0"].contf0)
        frames = ref["contf0"].grid.frame_count
    if "mvf" in ref and "mvf" in pred:
        s.mvf_rmse = rmse(ref["mvf"].mvf, pred["mvf"].mvf)
        frames = ref["mvf"].grid.frame_count
    s.frames = frames or 0
    return s


# --- traces -------------------------------------------------------------------


def _column(track) -> np.ndarray:
    if isinstance(track, BaselinePitchTrack):
        return track.f0
    rows = track.to_rows()
    return rows[:, 0].astype(np.float64)


def traces_csv(tracks) -> str:
    """CSV text for ``[(name, track), ...]`` on a shared grid; NaN becomes an empty cell."""
    tracks = list(tracks)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time_s"] + [name for name, _ in tracks])
    if tracks:
        grid = check_same_grid(*(t.grid for _, t in tracks))
        cols = [_column(t) for _, t in tracks]
        for i, t in enumerate(grid.times()):
            writer.writerow([f"{t:.4f}"] + ["" if not np.isfinite(c[i]) else f"{c[i]:.6g}" for c in cols])
    return buf.getvalue()


def export_traces(tracks, path) -> None:
    text = traces_csv(tracks)
    with atomic_open(path, "w") as fh:
        fh.write(text)


# --- spectral distortion ------------------------------------------------------


def mel_filterbank(bands: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters evenly spaced on the mel scale from 0 Hz to Nyquist."""
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = from_mel(np.linspace(0.0, to_mel(sample_rate / 2), bands + 2))
    f = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    fb = np.zeros((bands, f.size))
    for i in range(bands):
        lo, mid, hi = edges[i:i + 3]
        fb[i] = np.clip(np.minimum((f - lo) / (mid - lo), (hi - f) / (hi - mid)), 0.0, None)
    return fb


def mel_log_spectral_distortion(ref, test, sample_rate: int, nfft: int = 1024, hop: int = 256,
                                bands: int = 40) -> float:
    """Median over frames of the RMS mel-band level difference, in dB.

    One global level offset (the mean difference over all frames and bands)
    is removed first, so peak normalization of either signal does not count
    as distortion. Frames where the reference is more than 60 dB below its
    loudest frame are skipped.
    """
    x = np.asarray(ref, dtype=np.float64).reshape(-1)
    y = np.asarray(test, dtype=np.float64).reshape(-1)
    n = min(x.size, y.size)
    if n < nfft:
        raise EmptyMaskError("signals shorter than one analysis frame")
    fb = mel_filterbank(bands, nfft, sample_rate)
    win = np.hanning(nfft)
    starts = np.arange(0, n - nfft + 1, hop)
    idx = starts[:, None] + np.arange(nfft)[None, :]

    def levels(s):
        power = np.abs(np.fft.rfft(s[idx] * win, axis=1)) ** 2
        return 10 * np.log10(power @ fb.T + 1e-20)

    lx, ly = levels(x), levels(y)
    energy = np.sum(x[idx] ** 2, axis=1)
    keep = energy > energy.max() * 1e-6
    diff = (lx - ly)[keep]
    diff -= diff.mean()
    return float(np.median(np.sqrt(np.mean(diff ** 2, axis=1))))
