"""Binary readers/writers for audio, ultrasound, tracks and prototypes.

All multi-byte fields are little-endian. Writers go through a temporary file
and ``os.replace`` so readers never observe a half-written output.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
import wave
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import FormatError, InsufficientDataError, IoError, UnsupportedError, ValidationError
from .tracks import (
    TRACK_TYPES,
    DatasetSplit,
    FrameGrid,
    MgcConfig,
    MgcLspTrack,
    ResidualPrototype,
    UltrasoundSequence,
    Waveform,
)

TRK_MAGIC = b"CVTR"
UTI_MAGIC = b"CVUS"
PROTO_MAGIC = b"CVRP"
VERSION = 1

_TRK_HEADER = struct.Struct("<4sHHIId")
_UTI_HEADER = struct.Struct("<4sHIHHf")
_PROTO_HEADER = struct.Struct("<4sHHII")


@contextmanager
def atomic_open(path, mode="wb"):
    """Open a temp file next to ``path``; rename over it on success."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


# --- WAV ----------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM RIFF file, scaling samples by 1/32768."""
    try:
        fh = wave.open(str(path), "rb")
    except FileNotFoundError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedError(f"{path}: {msg}") from exc
        raise FormatError(f"{path}: {msg}") from exc
    except (EOFError, struct.error) as exc:
        raise FormatError(f"{path}: truncated header") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        if fh.getnchannels() != 1:
            raise UnsupportedError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise UnsupportedError(f"{path}: expected 16-bit samples, got {8 * fh.getsampwidth()}-bit")
        n = fh.getnframes()
        raw = fh.readframes(n)
        rate = fh.getframerate()
    if len(raw) != 2 * n:
        raise FormatError(f"{path}: data chunk shorter than declared")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def quantize_pcm16(samples) -> np.ndarray:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def write_wav(w: Waveform, path) -> None:
    pcm = quantize_pcm16(w.samples)
    with atomic_open(path) as fh:
        with wave.open(fh, "wb") as out:
            out.setnchannels(1)
            out.setsampwidth(2)
            out.setframerate(w.sample_rate)
            out.writeframes(pcm.tobytes())


# --- ultrasound -------------------------------------------------------------


def write_uti(seq: UltrasoundSequence, path) -> None:
    header = _UTI_HEADER.pack(UTI_MAGIC, VERSION, len(seq), seq.height, seq.width, seq.fps)
    with atomic_open(path) as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(seq.frames, dtype=np.uint8).tobytes())


def read_uti(path) -> UltrasoundSequence:
    data = _read_bytes(path)
    if len(data) < _UTI_HEADER.size:
        raise FormatError(f"{path}: file shorter than the .uti header")
    magic, version, count, height, width, fps = _UTI_HEADER.unpack_from(data)
    if magic != UTI_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedError(f"{path}: unsupported .uti version {version}")
    need = count * height * width
    payload = data[_UTI_HEADER.size:]
    if len(payload) != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(count, height, width).copy()
    return UltrasoundSequence(frames, float(fps))


# --- parameter tracks ---------------------------------------------------------


def write_track(track, path) -> None:
    rows = np.ascontiguousarray(track.to_rows(), dtype="<f4")
    n, d = rows.shape
    header = _TRK_HEADER.pack(TRK_MAGIC, VERSION, track.kind, n, d, track.grid.frame_shift_seconds)
    with atomic_open(path) as fh:
        fh.write(header)
        fh.write(rows.tobytes())


def read_track_rows(path):
    """Return ``(kind, frame_shift_seconds, rows)`` with rows as float32."""
    data = _read_bytes(path)
    if len(data) < _TRK_HEADER.size:
        raise FormatError(f"{path}: file shorter than the .trk header")
    magic, version, kind, n, d, shift = _TRK_HEADER.unpack_from(data)
    if magic != TRK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedError(f"{path}: unsupported .trk version {version}")
    payload = data[_TRK_HEADER.size:]
    if len(payload) != 4 * n * d:
        raise FormatError(f"{path}: expected {4 * n * d} payload bytes, found {len(payload)}")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    return kind, shift, rows


def read_track(path, expected_kind: int | None = None, sample_rate: int = 22050,
               mgc_config: MgcConfig | None = None):
    """Read a ``.trk`` file into its track class.

    ``sample_rate`` is not stored on disk; the grid hop is recovered as
    ``round(frame_shift_seconds * sample_rate)``.
    """
    kind, shift, rows = read_track_rows(path)
    if expected_kind is not None and kind != expected_kind:
        raise FormatError(f"{path}: track kind {kind} where kind {expected_kind} was requested")
    if kind not in TRACK_TYPES:
        raise FormatError(f"{path}: unknown track kind {kind}")
    grid = FrameGrid(int(round(shift * sample_rate)), rows.shape[0], sample_rate)
    cls = TRACK_TYPES[kind]
    if cls is MgcLspTrack:
        return MgcLspTrack.from_rows(rows, grid, mgc_config)
    return cls.from_rows(rows, grid)


# --- residual prototype -----------------------------------------------------


def write_prototype(proto: ResidualPrototype, path) -> None:
    samples = np.ascontiguousarray(proto.samples, dtype="<f4")
    header = _PROTO_HEADER.pack(PROTO_MAGIC, VERSION, int(proto.fallback), proto.nominal_period, samples.size)
    with atomic_open(path) as fh:
        fh.write(header)
        fh.write(samples.tobytes())


def read_prototype(path) -> ResidualPrototype:
    data = _read_bytes(path)
    if len(data) < _PROTO_HEADER.size:
        raise FormatError(f"{path}: file shorter than the prototype header")
    magic, version, flags, period, length = _PROTO_HEADER.unpack_from(data)
    if magic != PROTO_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    payload = data[_PROTO_HEADER.size:]
    if len(payload) != 4 * length:
        raise FormatError(f"{path}: expected {4 * length} payload bytes, found {len(payload)}")
    samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return ResidualPrototype(samples, period, bool(flags & 1))


# --- dataset partitioning ---------------------------------------------------


def split_dataset(ids, ratios=(0.85, 0.10, 0.05), seed: int = 0) -> DatasetSplit:
    """Shuffle ``ids`` with ``seed`` and cut them by ``ratios``.

    Validation and test sizes are ``ratio * N`` rounded down (at least one
    each); whatever remains goes to training, e.g. 209 ids -> 179/20/10.
    """
    ids = list(ids)
    if len(ids) < 3:
        raise InsufficientDataError(f"need at least 3 utterances to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValidationError("utterance ids must be unique")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(ids)
    n_val = max(1, math.floor(ratios[1] * n + 1e-9))
    n_test = max(1, math.floor(ratios[2] * n + 1e-9))
    if n_val + n_test >= n:
        n_val, n_test = 1, 1
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        train=shuffled[n_val + n_test:],
        validation=shuffled[:n_val],
        test=shuffled[n_val:n_val + n_test],
    )
