import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.io import wavfile

from contvoc.errors import FormatError, InsufficientDataError, IoError, UnsupportedError
from contvoc.io import (
    read_prototype,
    read_track,
    read_uti,
    read_wav,
    split_dataset,
    write_prototype,
    write_track,
    write_uti,
    write_wav,
)
from contvoc.tracks import (
    KIND_BASELINE_F0,
    KIND_CONTF0,
    KIND_MGC_LSP,
    BaselinePitchTrack,
    ContinuousPitchTrack,
    FrameGrid,
    MgcLspTrack,
    MvfTrack,
    ResidualPrototype,
    UltrasoundSequence,
    VoicingTrack,
    Waveform,
)
from contvoc.mgc import flat_lsp

TRK_HEADER = struct.calcsize("<4sHHIId")


def test_read_wav_scaling(tmp_path):
    path = tmp_path / "a.wav"
    wavfile.write(path, 22050, np.array([0, 16384, -32768], dtype=np.int16))
    w = read_wav(path)
    assert w.sample_rate == 22050
    np.testing.assert_array_equal(w.samples, [0.0, 0.5, -1.0])


def test_read_wav_matches_scipy_reader(tmp_path):
    t = np.arange(22050) / 22050
    pcm = np.round(np.sin(2 * np.pi * 440 * t) * 20000).astype(np.int16)
    wavfile.write(tmp_path / "s.wav", 22050, pcm)
    ours = read_wav(tmp_path / "s.wav").samples
    _, ref = wavfile.read(tmp_path / "s.wav")
    assert np.max(np.abs(ours * 32768 - ref)) <= 1


def test_write_wav_readable_by_scipy(tmp_path):
    write_wav(Waveform(np.array([1.0, 0.0, -1.0, 0.25]), 16000), tmp_path / "o.wav")
    sr, data = wavfile.read(tmp_path / "o.wav")
    assert sr == 16000 and data.dtype == np.int16
    assert data.tolist() == [32767, 0, -32768, 8192]


def test_write_wav_clips(tmp_path):
    write_wav(Waveform(np.array([2.0, -3.0]), 22050), tmp_path / "c.wav")
    assert wavfile.read(tmp_path / "c.wav")[1].tolist() == [32767, -32768]


def test_wav_round_trip_quantization(tmp_path, rng):
    x = rng.uniform(-1, 1, 1000)
    write_wav(Waveform(x, 22050), tmp_path / "r.wav")
    back = read_wav(tmp_path / "r.wav").samples
    assert np.max(np.abs(back - x)) <= 1 / 32768


def test_wav_unsupported_encodings(tmp_path):
    wavfile.write(tmp_path / "st.wav", 22050, np.zeros((10, 2), dtype=np.int16))
    with pytest.raises(UnsupportedError):
        read_wav(tmp_path / "st.wav")
    wavfile.write(tmp_path / "f.wav", 22050, np.zeros(10, dtype=np.float32))
    with pytest.raises(UnsupportedError):
        read_wav(tmp_path / "f.wav")


def test_wav_malformed_and_missing(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFX0000WAVE")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "bad.wav")
    with pytest.raises(IoError):
        read_wav(tmp_path / "missing.wav")
    with pytest.raises(IoError):
        write_wav(Waveform(np.zeros(3), 22050), tmp_path / "no" / "such" / "dir" / "x.wav")


def test_uti_size_arithmetic(tmp_path):
    frames = np.arange(2 * 64 * 128, dtype=np.uint32).astype(np.uint8).reshape(2, 64, 128)
    write_uti(UltrasoundSequence(frames, 81.67), tmp_path / "u.uti")
    data = (tmp_path / "u.uti").read_bytes()
    header = struct.calcsize("<4sHIHHf")
    assert len(data) == header + 16384
    seq = read_uti(tmp_path / "u.uti")
    assert len(seq) == 2 and (seq.height, seq.width) == (64, 128)
    assert seq.fps == pytest.approx(81.67, rel=1e-6)


def test_uti_truncated_and_bad_magic(tmp_path):
    frames = np.zeros((2, 64, 128), dtype=np.uint8)
    write_uti(UltrasoundSequence(frames, 81.67), tmp_path / "u.uti")
    data = (tmp_path / "u.uti").read_bytes()
    (tmp_path / "t.uti").write_bytes(data[:-64 * 128])
    with pytest.raises(FormatError):
        read_uti(tmp_path / "t.uti")
    (tmp_path / "m.uti").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        read_uti(tmp_path / "m.uti")


@given(st.integers(0, 4), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_uti_round_trip_bytes(tmp_path_factory, n, h, w, seed):
    frames = np.random.default_rng(seed).integers(0, 256, (n, h, w), dtype=np.uint8)
    path = tmp_path_factory.mktemp("uti") / "x.uti"
    write_uti(UltrasoundSequence(frames, 60.0), path)
    back = read_uti(path)
    assert back.frames.tobytes() == frames.tobytes()
    assert back.frames.shape == (n, h, w)


def test_trk_contf0_header(tmp_path):
    grid = FrameGrid.from_rate(22050, 81.67, 3)
    write_track(ContinuousPitchTrack(np.array([120.0, 121.0, 119.0]), grid), tmp_path / "c.trk")
    data = (tmp_path / "c.trk").read_bytes()
    magic, version, kind, n, d, shift = struct.unpack_from("<4sHHIId", data)
    assert (magic, version, kind, n, d) == (b"CVTR", 1, KIND_CONTF0, 3, 1)
    assert shift == pytest.approx(270 / 22050)
    back = read_track(tmp_path / "c.trk", KIND_CONTF0)
    np.testing.assert_array_equal(back.contf0, [120.0, 121.0, 119.0])
    assert back.grid == grid


def test_trk_baseline_nan_rows(tmp_path):
    grid = FrameGrid.from_rate(22050, 81.67, 3)
    track = BaselinePitchTrack(np.array([True, True, False]), np.array([100.0, 110.0, np.nan]), grid)
    write_track(track, tmp_path / "b.trk")
    rows = np.frombuffer((tmp_path / "b.trk").read_bytes()[TRK_HEADER:], dtype="<f4")
    assert np.isnan(rows[2]) and rows[0] == 100.0
    back = read_track(tmp_path / "b.trk", KIND_BASELINE_F0)
    assert back.voiced.tolist() == [True, True, False]


def test_trk_mgc_payload_length(tmp_path):
    grid = FrameGrid.from_rate(22050, 81.67, 7)
    track = MgcLspTrack(np.zeros(7), np.tile(flat_lsp(24), (7, 1)), grid)
    write_track(track, tmp_path / "m.trk")
    assert (tmp_path / "m.trk").stat().st_size == TRK_HEADER + 7 * 25 * 4
    back = read_track(tmp_path / "m.trk", KIND_MGC_LSP)
    np.testing.assert_array_equal(back.lsp, track.lsp.astype(np.float32))


def test_trk_kind_mismatch(tmp_path):
    grid = FrameGrid.from_rate(22050, 81.67, 2)
    write_track(MvfTrack(np.array([300.0, 5000.0]), grid), tmp_path / "v.trk")
    with pytest.raises(FormatError):
        read_track(tmp_path / "v.trk", KIND_CONTF0)


@given(st.lists(st.floats(1.0, 1000.0, width=32), min_size=0, max_size=40))
def test_trk_round_trip_bit_exact(tmp_path_factory, values):
    grid = FrameGrid.from_rate(22050, 81.67, len(values))
    path = tmp_path_factory.mktemp("trk") / "x.trk"
    voiced = np.array([i % 3 != 0 for i in range(len(values))], dtype=bool)
    track = BaselinePitchTrack(voiced, np.where(voiced, values, np.nan), grid)
    write_track(track, path)
    back = read_track(path, KIND_BASELINE_F0)
    assert back.voiced.tolist() == voiced.tolist()
    np.testing.assert_array_equal(back.f0[voiced], np.asarray(values, dtype=np.float32)[voiced])


def test_voicing_track_round_trip(tmp_path):
    grid = FrameGrid.from_rate(22050, 81.67, 4)
    write_track(VoicingTrack(np.array([1, 0, 0, 1], dtype=bool), grid), tmp_path / "v.trk")
    assert read_track(tmp_path / "v.trk").voiced.tolist() == [True, False, False, True]


def test_prototype_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal(360)
    x /= np.sqrt(np.mean(x ** 2))
    proto = ResidualPrototype(x, 180, fallback=True)
    write_prototype(proto, tmp_path / "p.proto")
    back = read_prototype(tmp_path / "p.proto")
    assert back.nominal_period == 180 and back.fallback
    np.testing.assert_array_equal(back.samples, x.astype(np.float32))


@pytest.mark.parametrize("n, sizes", [(200, (170, 20, 10)), (209, (179, 20, 10))])
def test_split_sizes(n, sizes):
    s = split_dataset([f"u{i}" for i in range(n)], (0.85, 0.10, 0.05), seed=3)
    assert (len(s.train), len(s.validation), len(s.test)) == sizes


def test_split_deterministic_and_too_small():
    ids = [f"u{i}" for i in range(50)]
    assert split_dataset(ids, seed=7) == split_dataset(ids, seed=7)
    with pytest.raises(InsufficientDataError):
        split_dataset(["a", "b"])


@given(st.integers(3, 400), st.integers(0, 10**6))
def test_split_partitions(n, seed):
    ids = list(range(n))
    s = split_dataset(ids, seed=seed)
    parts = [set(s.train), set(s.validation), set(s.test)]
    assert sum(len(p) for p in parts) == n
    assert set().union(*parts) == set(ids)
    assert all(len(p) > 0 for p in parts)
