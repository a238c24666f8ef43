"""Command-line entry point: ``contvoc <subcommand> ...``.

Parameter sets are addressed by a path prefix ``P``: the continuous vocoder
uses ``P.contf0.trk``, ``P.mvf.trk``, ``P.mgc.trk`` and ``P.proto``; the
baseline uses ``P.f0.trk``, ``P.vuv.trk`` and ``P.mgc.trk``. Every command
writes a ``*.run.json`` manifest (flags, configuration, version) next to its
main output. Exit status: 0 success, 1 invalid input or usage, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, nn
from .config import PipelineConfig, load_config
from .corpus import build_dataset, corpus_split, write_synthetic_corpus
from .errors import ContVocError, IoError, ValidationError
from .io import (
    atomic_open,
    read_prototype,
    read_track,
    read_track_rows,
    read_uti,
    read_wav,
    write_prototype,
    write_track,
    write_wav,
)
from .metrics import EvalReport, export_traces, score_utterance
from .pipeline import analyze_baseline, analyze_continuous, copy_synthesize, copy_synthesize_baseline
from .synth import (
    BaselineVocoderParams,
    ContinuousVocoderParams,
    fallback_prototype,
    synthesize_baseline,
    synthesize_continuous,
)
from .tracks import (
    KIND_BASELINE_F0,
    KIND_CONTF0,
    KIND_MGC_LSP,
    KIND_MVF,
    VoicingTrack,
)


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _track_path(prefix, suffix: str) -> Path:
    return Path(f"{prefix}.{suffix}.trk")


def _manifest_path(output) -> Path:
    p = Path(output)
    return p / "run.json" if p.is_dir() else p.with_name(p.name + ".run.json")


def write_manifest(output, args: argparse.Namespace, cfg: PipelineConfig) -> None:
    """Flags, resolved configuration and version; no timestamps, so reruns are byte-identical."""
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {"command": args.command, "flags": flags, "config": cfg.to_dict(), "version": __version__}
    with atomic_open(_manifest_path(output), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _ensure_parent(path) -> None:
    parent = Path(path).parent
    try:
        parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {parent}: {exc}") from exc


# --- subcommands --------------------------------------------------------------


def cmd_analyze(args, cfg):
    w = read_wav(args.input)
    res = analyze_continuous(w, cfg)
    _ensure_parent(args.out)
    p = res.params
    write_track(p.contf0, _track_path(args.out, "contf0"))
    write_track(p.mvf, _track_path(args.out, "mvf"))
    write_track(p.mgc, _track_path(args.out, "mgc"))
    write_prototype(res.prototype, f"{args.out}.proto")
    if res.prototype.fallback:
        print("note: too few confident frames, used the fallback pulse prototype", file=sys.stderr)
    if res.unconverged_frames:
        print(f"note: {res.unconverged_frames} MGC frames did not converge", file=sys.stderr)
    return args.out


def cmd_analyze_baseline(args, cfg):
    w = read_wav(args.input)
    p = analyze_baseline(w, cfg)
    _ensure_parent(args.out)
    write_track(p.pitch, _track_path(args.out, "f0"))
    write_track(VoicingTrack(p.pitch.voiced, p.grid), _track_path(args.out, "vuv"))
    write_track(p.mgc, _track_path(args.out, "mgc"))
    return args.out


def _read(prefix, suffix, kind, cfg):
    return read_track(_track_path(prefix, suffix), kind, cfg.sample_rate, cfg.mgc)


def cmd_synth(args, cfg):
    p = ContinuousVocoderParams(_read(args.input, "contf0", KIND_CONTF0, cfg),
                                _read(args.input, "mvf", KIND_MVF, cfg),
                                _read(args.input, "mgc", KIND_MGC_LSP, cfg))
    proto_path = Path(args.proto) if args.proto else Path(f"{args.input}.proto")
    if proto_path.exists():
        proto = read_prototype(proto_path)
    else:
        print(f"note: {proto_path} not found, using the fallback pulse prototype", file=sys.stderr)
        proto = fallback_prototype(p.grid.frame_shift_samples)
    y = synthesize_continuous(p, proto, cfg.noise_seed, cfg.noise_gain)
    _ensure_parent(args.out)
    write_wav(y, args.out)
    return args.out


def cmd_synth_baseline(args, cfg):
    p = BaselineVocoderParams(_read(args.input, "f0", KIND_BASELINE_F0, cfg),
                              _read(args.input, "mgc", KIND_MGC_LSP, cfg))
    y = synthesize_baseline(p, cfg.noise_seed)
    _ensure_parent(args.out)
    write_wav(y, args.out)
    return args.out


def cmd_copy_synth(args, cfg):
    w = read_wav(args.input)
    y = copy_synthesize_baseline(w, cfg) if args.baseline else copy_synthesize(w, cfg)
    _ensure_parent(args.out)
    write_wav(y, args.out)
    return args.out


def cmd_train(args, cfg):
    task = nn.get_task(args.task)
    cfg = cfg.replace(**{k: v for k, v in (("max_epochs", args.epochs), ("patience", args.patience),
                                            ("learning_rate", args.lr), ("batch_size", args.batch),
                                            ("train_seed", args.seed)) if v is not None})
    data = build_dataset(task.name, args.data, cfg=cfg, jobs=args.jobs)
    split = corpus_split(args.data, cfg)
    model = nn.build_network(nn.NetworkSpec.for_task(task, input_height=data.inputs.shape[1],
                                                     input_width=data.inputs.shape[2]), seed=cfg.train_seed)
    model.task = task.name
    tc = nn.TrainConfig(max_epochs=cfg.max_epochs, patience=cfg.patience, batch_size=cfg.batch_size,
                        learning_rate=cfg.learning_rate, seed=cfg.train_seed)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    best, history = nn.train(model, data, split, tc, voiced_only=task.voiced_only, log=log)
    _ensure_parent(args.out)
    nn.save_model(best, args.out)
    hist_path = args.history or Path(args.out).with_suffix(".history.csv")
    with atomic_open(hist_path, "w") as fh:
        fh.write(history.to_csv())
    print(f"{task.name}: {history.epochs_run} epochs, best epoch {history.best_epoch}, "
          f"val loss {history.records[history.best_epoch - 1].val_loss:.6g}")
    return args.out


def cmd_predict(args, cfg):
    uti = read_uti(args.uti)
    models = {}
    for path in args.models:
        m = nn.load_model(path)
        if m.task is None:
            raise ValidationError(f"{path}: model does not record its task")
        if m.task in models:
            raise ValidationError(f"two models for task {m.task}")
        models[m.task] = m
    p = nn.predict_tracks(models, uti, cfg.sample_rate, cfg.mvf_floor, cfg.mgc)
    _ensure_parent(args.out)
    if isinstance(p, ContinuousVocoderParams):
        write_track(p.contf0, _track_path(args.out, "contf0"))
        write_track(p.mvf, _track_path(args.out, "mvf"))
    else:
        write_track(p.pitch, _track_path(args.out, "f0"))
        write_track(VoicingTrack(p.pitch.voiced, p.grid), _track_path(args.out, "vuv"))
    write_track(p.mgc, _track_path(args.out, "mgc"))
    if p.repaired_frames:
        print(f"note: repaired LSP ordering in {p.repaired_frames} frames", file=sys.stderr)
    return args.out


def _available(prefix, cfg) -> dict:
    out = {}
    for key, kind in (("f0", KIND_BASELINE_F0), ("contf0", KIND_CONTF0), ("mvf", KIND_MVF)):
        if _track_path(prefix, key).exists():
            out[key] = _read(prefix, key, kind, cfg)
    return out


def cmd_eval(args, cfg):
    if len(args.ref) != len(args.pred):
        raise UsageError("--ref and --pred need the same number of prefixes")
    report = EvalReport()
    for ref, pred in zip(args.ref, args.pred):
        r, p = _available(ref, cfg), _available(pred, cfg)
        if not set(r) & set(p):
            raise ValidationError(f"{ref} and {pred} share no comparable tracks")
        report.add(score_utterance(Path(ref).name, r, p))
    _ensure_parent(args.out)
    report.write(args.out)
    agg = report.aggregate()
    f0_key = "f0_rmse_all_frames" if args.all_frames else "f0_rmse"
    parts = [f"{k}={agg[k]:.4g}" for k in ("vuv_accuracy", f0_key, "contf0_rmse", "mvf_rmse")
             if agg.get(k) is not None]
    print(" ".join(parts) or "no comparable tracks")
    return args.out


def cmd_export_traces(args, cfg):
    tracks = []
    for item in args.track:
        name, sep, path = item.partition("=")
        if not sep:
            path, name = item, Path(item).name.split(".trk")[0]
        kind, _, _ = read_track_rows(path)
        if kind == KIND_MGC_LSP:
            raise ValidationError(f"{path}: MGC-LSP tracks are vectors and cannot be exported as traces")
        tracks.append((name, read_track(path, kind, cfg.sample_rate, cfg.mgc)))
    _ensure_parent(args.out)
    export_traces(tracks, args.out)
    return args.out


def cmd_gen_synthetic(args, cfg):
    names = write_synthetic_corpus(args.out, args.count, args.seed, args.duration, cfg, args.jobs)
    print(f"wrote {len(names)} utterances to {args.out}")
    return Path(args.out)


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--jobs", type=int, default=1, help="utterance-level worker processes")

    parser = _Parser(prog="contvoc", description="Continuous vocoder toolkit for ultrasound-to-speech mapping.")
    parser.add_argument("--version", action="version", version=f"contvoc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("analyze", cmd_analyze, "WAV -> ContF0, MVF, MGC-LSP tracks and residual prototype")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, help="output prefix")
    p = add("analyze-baseline", cmd_analyze_baseline, "WAV -> V/UV, F0 and MGC-LSP tracks")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, help="output prefix")
    p = add("synth", cmd_synth, "continuous-vocoder tracks -> WAV")
    p.add_argument("--in", dest="input", required=True, help="track prefix")
    p.add_argument("--proto", type=Path, help="residual prototype (default: <prefix>.proto)")
    p.add_argument("--out", required=True, type=Path)
    p = add("synth-baseline", cmd_synth_baseline, "baseline tracks -> WAV")
    p.add_argument("--in", dest="input", required=True, help="track prefix")
    p.add_argument("--out", required=True, type=Path)
    p = add("copy-synth", cmd_copy_synth, "analyze then resynthesize")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--baseline", action="store_true", help="use the pulse/noise baseline vocoder")
    p = add("train", cmd_train, "train one network on a paired corpus")
    p.add_argument("--data", required=True, type=Path, help="corpus directory of <id>.wav + <id>.uti")
    p.add_argument("--task", required=True, choices=sorted(nn.TASKS))
    p.add_argument("--out", required=True, type=Path, help="model file (.nnm)")
    p.add_argument("--history", type=Path, help="loss history CSV (default: <out>.history.csv)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", action="store_true", help="log every epoch to stderr")
    p = add("predict", cmd_predict, "ultrasound + models -> tracks")
    p.add_argument("--uti", required=True, type=Path)
    p.add_argument("--models", required=True, nargs="+", type=Path)
    p.add_argument("--out", required=True, help="output prefix")
    p = add("eval", cmd_eval, "compare reference and predicted tracks")
    p.add_argument("--ref", required=True, nargs="+", help="reference track prefixes")
    p.add_argument("--pred", required=True, nargs="+", help="predicted track prefixes, same order")
    p.add_argument("--out", required=True, type=Path, help="JSON report")
    p.add_argument("--all-frames", action="store_true",
                   help="summarize F0 RMSE over all frames (unvoiced as 0 Hz); the report holds both")
    p = add("export-traces", cmd_export_traces, "tracks -> CSV for plotting")
    p.add_argument("--track", required=True, action="append", metavar="NAME=PATH")
    p.add_argument("--out", required=True, type=Path)
    p = add("gen-synthetic", cmd_gen_synthetic, "write a paired synthetic corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=0.4, help="seconds per utterance")
    return parser


def run(argv=None) -> int:
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help and --version
            return int(exc.code or 0)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(args.config, args.set)
        output = args.func(args, cfg)
        write_manifest(output, args, cfg)
    except IoError as exc:
        print(f"contvoc: error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"contvoc: error: {exc}", file=sys.stderr)
        return 1
    except (ContVocError, ArithmeticError) as exc:
        print(f"contvoc: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"contvoc: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
