"""Paired (ultrasound, audio) corpora on disk and the frame datasets built from them.

A corpus directory holds ``<id>.wav`` and ``<id>.uti`` for every utterance.
Reference tracks come from analysing the audio; they are cached under
``.analysis/<config digest>/`` so that training several networks analyses
each utterance once.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import InsufficientDataError, IoError
from .io import atomic_open, read_track, read_uti, read_wav, split_dataset, write_track, write_uti, write_wav
from .mgc import analyze_mgc
from .mvf import estimate_mvf
from .nn import FramePairDataset, get_task
from .pitch import analyze_pitch, track_baseline, track_continuous
from .pipeline import utterance_grid
from .synthetic import generate_utterance
from .tracks import (
    KIND_BASELINE_F0,
    KIND_CONTF0,
    KIND_MGC_LSP,
    KIND_MVF,
    DatasetSplit,
    UltrasoundSequence,
)

MANIFEST = "corpus.json"
SPLIT_RATIOS = (0.85, 0.10, 0.05)
# which analysis settings change the reference tracks
_ANALYSIS_KEYS = ("sample_rate", "fps", "order", "alpha", "stage", "f_min", "f_max", "process_variance",
                  "voicing_threshold", "energy_floor_db", "harmonicity_threshold", "mvf_floor",
                  "group_size", "mvf_median")
_KINDS = {"f0": KIND_BASELINE_F0, "contf0": KIND_CONTF0, "mvf": KIND_MVF, "mgc": KIND_MGC_LSP}


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- synthetic corpus -----------------------------------------------------------


def _write_one(args):
    out, name, seed, index, duration, sample_rate, fps = args
    u = generate_utterance(name, seed, index, duration, sample_rate, fps)
    write_wav(u.wave, out / f"{name}.wav")
    write_uti(UltrasoundSequence(u.images, fps), out / f"{name}.uti")
    return name


def write_synthetic_corpus(out, count: int, seed: int = 0, duration: float = 0.4,
                           cfg: PipelineConfig = PipelineConfig(), jobs: int = 1) -> list:
    """Generate ``count`` paired utterances into ``out`` plus a ``corpus.json`` manifest."""
    if count < 1:
        raise InsufficientDataError("corpus needs at least one utterance")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    names = [f"utt{i:04d}" for i in range(count)]
    work = [(out, n, seed, i, duration, cfg.sample_rate, cfg.fps) for i, n in enumerate(names)]
    _map(_write_one, work, jobs)
    manifest = {"utterances": names, "seed": seed, "duration": duration,
                "sample_rate": cfg.sample_rate, "fps": cfg.fps}
    with atomic_open(out / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return names


# --- corpus access -------------------------------------------------------------


def list_utterances(corpus) -> list:
    """Sorted ids that have both a ``.wav`` and a ``.uti`` file."""
    corpus = Path(corpus)
    if not corpus.is_dir():
        raise IoError(f"{corpus} is not a directory")
    return sorted(p.stem for p in corpus.glob("*.uti") if (corpus / f"{p.stem}.wav").exists())


def corpus_split(corpus, cfg: PipelineConfig = PipelineConfig()) -> DatasetSplit:
    return split_dataset(list_utterances(corpus), SPLIT_RATIOS, cfg.split_seed)


def analysis_digest(cfg: PipelineConfig) -> str:
    d = cfg.to_dict()
    text = json.dumps({k: d[k] for k in _ANALYSIS_KEYS}, sort_keys=True)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def reference_tracks(w, cfg: PipelineConfig = PipelineConfig()) -> dict:
    """Every track a network can be trained on: ``f0`` (baseline), ``contf0``, ``mvf``, ``mgc``."""
    grid = utterance_grid(w, cfg)
    obs, rms_db = analyze_pitch(w, grid, cfg.tracker)
    contf0 = track_continuous(w, grid, cfg.tracker, observations=obs)
    pitch = track_baseline(w, grid, cfg.tracker, observations=obs, rms_db=rms_db)
    mvf = estimate_mvf(w, contf0, grid, cfg.mvf)
    mgc, _ = analyze_mgc(w, grid, cfg.mgc)
    return {"f0": pitch, "contf0": contf0, "mvf": mvf, "mgc": mgc}


def _cache_dir(corpus, cfg) -> Path:
    return Path(corpus) / ".analysis" / analysis_digest(cfg)


def _analyze_cached(args):
    corpus, name, cfg = args
    cache = _cache_dir(corpus, cfg)
    paths = {key: cache / f"{name}.{key}.trk" for key in _KINDS}
    if not all(p.exists() for p in paths.values()):
        tracks = reference_tracks(read_wav(Path(corpus) / f"{name}.wav"), cfg)
        cache.mkdir(parents=True, exist_ok=True)
        for key, track in tracks.items():
            write_track(track, paths[key])
    return name


def load_reference_tracks(corpus, name: str, cfg: PipelineConfig = PipelineConfig()) -> dict:
    _analyze_cached((corpus, name, cfg))
    cache = _cache_dir(corpus, cfg)
    return {key: read_track(cache / f"{name}.{key}.trk", kind, cfg.sample_rate, cfg.mgc)
            for key, kind in _KINDS.items()}


def analyze_corpus(corpus, names=None, cfg: PipelineConfig = PipelineConfig(), jobs: int = 1) -> list:
    names = list_utterances(corpus) if names is None else list(names)
    return _map(_analyze_cached, [(str(corpus), n, cfg) for n in names], jobs)


def task_targets(task: str, tracks: dict):
    """Raw per-frame targets for ``task`` and the voiced mask (baseline F0 only)."""
    pitch = tracks["f0"]
    if task == "vuv":
        return pitch.voiced.astype(np.float64), None
    if task == "f0":
        # unvoiced rows are never trained on; ContF0 keeps them finite
        return np.log(np.where(pitch.voiced, pitch.f0, tracks["contf0"].contf0)), pitch.voiced
    if task == "contf0":
        return np.log(tracks["contf0"].contf0), None
    if task == "mvf":
        return np.log(tracks["mvf"].mvf), None
    if task == "mgc":
        return tracks["mgc"].to_rows(), None
    get_task(task)
    raise AssertionError(task)


def build_dataset(task: str, corpus, names=None, cfg: PipelineConfig = PipelineConfig(),
                  jobs: int = 1) -> FramePairDataset:
    """Frame pairs for ``task`` over ``names``; each utterance is cut to its shorter side."""
    get_task(task)
    names = analyze_corpus(corpus, names, cfg, jobs)
    if not names:
        raise InsufficientDataError(f"no utterances in {corpus}")
    inputs, targets, labels, masks = [], [], [], []
    for name in names:
        uti = read_uti(Path(corpus) / f"{name}.uti")
        t, mask = task_targets(task, load_reference_tracks(corpus, name, cfg))
        n = min(len(uti), t.shape[0])
        inputs.append(uti.frames[:n])
        targets.append(np.asarray(t, dtype=np.float64).reshape(t.shape[0], -1)[:n])
        labels.append(np.full(n, name))
        masks.append(np.ones(n, dtype=bool) if mask is None else mask[:n])
    voiced = np.concatenate(masks) if get_task(task).voiced_only else None
    return FramePairDataset(np.concatenate(inputs), np.concatenate(targets), np.concatenate(labels), voiced)
