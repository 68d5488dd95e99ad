"""Command-line entry point.

Subcommands: synth, preprocess, train, crossval, evaluate, ablate, hypnogram.
Every command that writes outputs also writes ``config.json`` with the fully
resolved arguments; ``--config`` on the same subcommand replays it. Flags
given explicitly on the command line override config-file entries.

Environment variables may supply paths only: ``SLEEPSTAGE_DATA`` is the
default for ``--data`` and ``SLEEPSTAGE_OUT`` the parent of default output
directories.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .model import FUSIONS, INTER_POOLINGS, MODALITIES, PRESETS, TEMPORALS, ModelConfig
from .preprocess import EPOCH_SAMPLES, SAMPLE_RATE_HZ, bandpass_record
from .signal_io import (
    CANONICAL_CHANNELS,
    Hypnogram,
    Recording,
    StageLabel,
    Subject,
    SynthConfig,
    read_dataset,
    read_edf,
    resample_half,
    select_channels,
    subject_dirs,
    synth_dataset,
    write_dataset,
    write_subject,
)
from .training import (
    TrainConfig,
    ablation_suite,
    ablation_table,
    cross_validate,
    crossval_table,
    dump_json,
    evaluate,
    export_hypnogram,
    load_model,
    make_folds,
    metrics_table,
    prepare_subject,
    save_model,
    split_validation,
    train,
)
from .training.crossval import ablation_variants

log = logging.getLogger("sleepstage")

CONFIG_NAME = "config.json"


class UsageError(Exception):
    pass


def _env_path(name: str) -> str | None:
    return os.environ.get(name) or None


def _default_out(sub: str) -> str:
    return str(Path(os.environ.get("SLEEPSTAGE_OUT", "runs")) / sub)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ----------------------------------------------------------------- options


MODEL_KEYS = (
    "d_cnn",
    "d_tr",
    "num_heads",
    "d_ff",
    "transformer_layers",
    "context_window",
    "dropout",
    "cnn_branch_channels",
    "fusion",
    "temporal",
    "inter_pooling",
    "modalities",
    "share_encoders",
)
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model (unset values come from --preset)")
    g.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="base model size (default: desk)")
    choices = {"fusion": FUSIONS, "temporal": TEMPORALS, "inter_pooling": INTER_POOLINGS}
    types = {f.name: f.type for f in fields(ModelConfig)}
    for key in MODEL_KEYS:
        if key == "modalities":
            g.add_argument(_flag(key), help=f"comma-separated subset of {','.join(MODALITIES)}")
        elif key == "share_encoders":
            g.add_argument(_flag(key), action="store_true", default=None)
        elif key in choices:
            g.add_argument(_flag(key), choices=choices[key])
        else:
            g.add_argument(_flag(key), type=float if types[key] == "float" else int)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    for f in fields(TrainConfig):
        if f.type == "bool":
            g.add_argument(_flag(f.name), action="store_true")
        else:
            g.add_argument(_flag(f.name), type=float if f.type == "float" else int, default=f.default, help="default: %(default)s")


def _add_data_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="native dataset directory (env: SLEEPSTAGE_DATA)")


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed for every random stream")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sleepstage", description="Hierarchical EEG/EOG sleep staging.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", help="JSON file of flag values (as written to config.json)")
        return p

    p = command("synth", "generate a synthetic native-format dataset")
    _add_seed(p)
    s = SynthConfig()
    p.add_argument("--subjects", type=int, default=s.num_subjects)
    p.add_argument("--epochs", type=int, default=s.epochs_per_subject, help="30 s epochs per subject")
    p.add_argument("--noise-std", type=float, default=s.noise_std, help="background noise in microvolts")
    p.add_argument("--context-coupled", action="store_true", help="blank repeated-stage epochs with probability --quiet-prob")
    p.add_argument("--quiet-prob", type=float, default=s.quiet_prob)
    p.add_argument("--start-stage", default=s.start_stage, choices=[st.name for st in StageLabel])
    p.add_argument("--out", required=False)

    p = command("preprocess", "EDF or native input to a filtered, epoched native dataset")
    p.add_argument("--input", help="EDF file, directory of EDF files, or native dataset directory")
    p.add_argument("--labels", help="per-epoch stage labels for EDF input (file, or directory of <stem>.txt)")
    p.add_argument("--channels", help="EEG1=name,EEG2=name,EOG=name overrides for channel matching")
    p.add_argument("--out")

    p = command("train", "train one model on a dataset")
    _add_data_flag(p)
    _add_seed(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out")

    p = command("crossval", "subject-wise k-fold cross-validation")
    _add_data_flag(p)
    _add_seed(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--parallel", type=int, default=1, help="folds trained concurrently")
    p.add_argument("--out")

    p = command("evaluate", "score a trained model")
    _add_data_flag(p)
    p.add_argument("--model", help="directory written by train")
    p.add_argument("--subjects", help="comma-separated subject ids (default: all)")
    p.add_argument("--out")

    p = command("ablate", "cross-validate the fusion x temporal x modality grid")
    _add_data_flag(p)
    _add_seed(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--variants", help="comma-separated variant names (default: all 16)")
    p.add_argument("--out")

    p = command("hypnogram", "write truth vs predicted stages for one subject")
    _add_data_flag(p)
    p.add_argument("--model", help="directory written by train")
    p.add_argument("--subject", help="subject id")
    p.add_argument("--out", help="output .tsv path")
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            stored = json.loads(Path(args.config).read_text())
        except OSError as e:
            parser.exit(1, f"sleepstage: cannot read config {args.config}: {e.strerror}\n")
        stored = stored.get("args", stored)
        if stored.get("command", args.command) != args.command:
            parser.error(f"config {args.config} was written by '{stored.get('command')}', not '{args.command}'")
        sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        known = {a.dest for a in sub._actions}  # noqa: SLF001
        unknown = set(stored) - known - {"command", "verbose", "config"}
        if unknown:
            parser.error(f"config {args.config} has unknown keys {sorted(unknown)}")
        sub.set_defaults(**{k: v for k, v in stored.items() if k in known and k != "config"})
        args = parser.parse_args(argv)

    if getattr(args, "data", "absent") is None:
        args.data = _env_path("SLEEPSTAGE_DATA")
    missing = []
    required = {
        "crossval": ["data"],
        "train": ["data"],
        "ablate": ["data"],
        "evaluate": ["data", "model"],
        "hypnogram": ["data", "model", "subject", "out"],
        "preprocess": ["input", "out"],
        "synth": [],
    }[args.command]
    for name in required:
        if getattr(args, name) in (None, ""):
            missing.append("--" + name.replace("_", "-"))
    if missing:
        sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        sub.error(f"missing required argument(s): {', '.join(missing)}")
    return args


def _model_config(args) -> ModelConfig:
    changes = {k: getattr(args, k) for k in MODEL_KEYS if getattr(args, k) is not None}
    if "modalities" in changes:
        changes["modalities"] = tuple(m.strip() for m in changes["modalities"].split(","))
    return PRESETS[args.preset]().replace(**changes)


def _train_config(args) -> TrainConfig:
    return TrainConfig(**{k: getattr(args, k) for k in TRAIN_KEYS})


def _write_config(out: Path, args, **resolved) -> None:
    out.mkdir(parents=True, exist_ok=True)
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    doc = {"version": __version__, "args": flags}
    doc.update(resolved)
    (out / CONFIG_NAME).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_prepared(data: str, modalities=CANONICAL_CHANNELS):
    subjects = read_dataset(data)
    prepared = []
    for s in subjects:
        if not all(m in s.recording.channels for m in modalities):
            s = Subject(select_channels(s.recording), s.hypnogram, s.filtered)
        prepared.append(prepare_subject(s, modalities))
    return prepared


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed,
        num_subjects=args.subjects,
        epochs_per_subject=args.epochs,
        noise_std=args.noise_std,
        context_coupled=args.context_coupled,
        quiet_prob=args.quiet_prob,
        start_stage=args.start_stage,
    )
    out = Path(args.out or _env_path("SLEEPSTAGE_DATA") or _default_out("synth"))
    write_dataset(out, synth_dataset(cfg))
    _write_config(out, args, synth=cfg.to_dict())
    print(f"wrote {cfg.num_subjects} subjects x {cfg.epochs_per_subject} epochs to {out}")
    return 0


def _read_labels(path: Path) -> np.ndarray:
    if path.suffix == ".u8":
        return np.fromfile(path, dtype=np.uint8)
    tokens = path.read_text().split()
    return np.array([int(StageLabel.parse(t)) for t in tokens], dtype=np.uint8)


def _channel_patterns(spec: str | None):
    if not spec:
        return None
    patterns = {}
    for item in spec.split(","):
        key, _, name = item.partition("=")
        if key not in CANONICAL_CHANNELS or not name:
            raise UsageError(f"bad --channels entry {item!r}; expected e.g. EEG1='EEG Fpz-Cz'")
        patterns[key] = (name,)
    for key in CANONICAL_CHANNELS:
        patterns.setdefault(key, ())
    from .signal_io.types import DEFAULT_CHANNEL_PATTERNS

    return {k: v or DEFAULT_CHANNEL_PATTERNS[k] for k, v in patterns.items()}


def _to_100hz(rec: Recording) -> np.ndarray:
    data = rec.as_array(CANONICAL_CHANNELS).astype(np.float64)
    if rec.sample_rate_hz == 200:
        # the band-pass designed at 200 Hz is the anti-alias filter
        return resample_half(data, 200)
    if rec.sample_rate_hz == SAMPLE_RATE_HZ:
        return bandpass_record(data, SAMPLE_RATE_HZ)
    raise ValueError(f"{rec.subject_id}: unsupported sample rate {rec.sample_rate_hz} Hz (need 100 or 200)")


def _finish_subject(sid: str, data: np.ndarray, labels: np.ndarray) -> Subject:
    n = min(data.shape[1] // EPOCH_SAMPLES, labels.size)
    if n == 0:
        raise ValueError(f"{sid}: no complete labeled epochs")
    if n != labels.size or n * EPOCH_SAMPLES != data.shape[1]:
        log.warning("%s: keeping %d epochs (signal has %d, labels %d)", sid, n, data.shape[1] // EPOCH_SAMPLES, labels.size)
    data = data[:, : n * EPOCH_SAMPLES]
    rec = Recording(sid, {m: data[i].astype(np.float32) for i, m in enumerate(CANONICAL_CHANNELS)}, SAMPLE_RATE_HZ)
    return Subject(rec, Hypnogram(labels[:n]), filtered=True)


def cmd_preprocess(args) -> int:
    src = Path(args.input)
    out = Path(args.out)
    patterns = _channel_patterns(args.channels)
    if not src.exists():
        raise FileNotFoundError(f"input not found: {src}")
    written = 0
    if src.is_dir() and subject_dirs(src):
        for s in read_dataset(src):
            rec = select_channels(s.recording, patterns)
            if s.filtered and rec.sample_rate_hz == SAMPLE_RATE_HZ:
                data = rec.as_array(CANONICAL_CHANNELS).astype(np.float64)
            else:
                data = _to_100hz(rec)
            write_subject(out, _finish_subject(rec.subject_id, data, s.hypnogram.labels))
            written += 1
    else:
        files = sorted(src.glob("*.edf")) if src.is_dir() else [src]
        if not files:
            raise FileNotFoundError(f"no .edf files in {src}")
        if not args.labels:
            raise UsageError("--labels is required for EDF input")
        labels_path = Path(args.labels)
        for f in files:
            lp = labels_path / f"{f.stem}.txt" if labels_path.is_dir() else labels_path
            if not lp.exists():
                raise FileNotFoundError(f"labels not found: {lp}")
            rec, _ = read_edf(f, subject_id=f.stem)
            rec = select_channels(rec, patterns)
            write_subject(out, _finish_subject(f.stem, _to_100hz(rec), _read_labels(lp)))
            written += 1
    _write_config(out, args)
    print(f"wrote {written} preprocessed subjects to {out}")
    return 0


def cmd_train(args) -> int:
    mcfg, tcfg = _model_config(args), _train_config(args)
    prepared = _load_prepared(args.data)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(0, 1)))
    train_ids, val_ids = split_validation([s.subject_id for s in prepared], tcfg.val_fraction, rng)
    by_id = {s.subject_id: s for s in prepared}
    model, history = train(
        [by_id[s] for s in train_ids],
        [by_id[s] for s in val_ids],
        mcfg,
        tcfg,
        seed=args.seed,
        key=(0, 0),
        progress=_progress,
    )
    out = Path(args.out or _default_out("train"))
    digest = save_model(model, out)
    _write_config(out, args, model_config=mcfg.to_dict(), train_config=tcfg.to_dict())
    dump_json({"history": history.to_dict(), "train_subjects": train_ids, "val_subjects": val_ids, "weights_sha256": digest}, out / "history.json")
    print(f"saved model to {out} (best epoch {history.best_epoch + 1}, {model.num_parameters()} parameters)")
    return 0


def _write_hypnograms(out: Path, prepared, predictions) -> None:
    d = out / "hypnograms"
    d.mkdir(parents=True, exist_ok=True)
    for s in prepared:
        if s.subject_id in predictions:
            export_hypnogram(Hypnogram(s.labels), Hypnogram(predictions[s.subject_id]), d / f"{s.subject_id}.tsv")


def cmd_crossval(args) -> int:
    mcfg, tcfg = _model_config(args), _train_config(args)
    prepared = _load_prepared(args.data)
    plan = make_folds([s.subject_id for s in prepared], args.folds, args.seed)
    out = Path(args.out or _default_out("crossval"))
    _write_config(out, args, model_config=mcfg.to_dict(), train_config=tcfg.to_dict())
    start = time.perf_counter()
    result = cross_validate(prepared, mcfg, tcfg, plan, args.seed, args.parallel, _progress)
    elapsed = time.perf_counter() - start
    dump_json(result.to_dict(), out / "report.json")
    table = crossval_table(result)
    (out / "report.txt").write_text(table + "\n")
    _write_hypnograms(out, prepared, result.predictions())
    print(table)
    print(f"\nwall time {elapsed:.1f} s; reports in {out}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    prepared = _load_prepared(args.data)
    if args.subjects:
        wanted = [s.strip() for s in args.subjects.split(",")]
        by_id = {s.subject_id: s for s in prepared}
        absent = [w for w in wanted if w not in by_id]
        if absent:
            raise ValueError(f"subjects not in {args.data}: {absent}")
        prepared = [by_id[w] for w in wanted]
    report, preds, loss = evaluate(model, prepared)
    out = Path(args.out or _default_out("evaluate"))
    _write_config(out, args)
    dump_json({"metrics": report.to_dict(), "mean_loss": loss, "subjects": [s.subject_id for s in prepared]}, out / "metrics.json")
    table = metrics_table(report)
    (out / "metrics.txt").write_text(table + "\n")
    _write_hypnograms(out, prepared, preds)
    print(table)
    return 0


def cmd_ablate(args) -> int:
    base, tcfg = _model_config(args), _train_config(args)
    names = [n for n, _ in ablation_variants(base)]
    variants = None
    if args.variants:
        variants = [v.strip() for v in args.variants.split(",")]
        unknown = [v for v in variants if v not in names]
        if unknown:
            raise UsageError(f"unknown variants {unknown}; choose from {names}")
    prepared = _load_prepared(args.data)
    plan = make_folds([s.subject_id for s in prepared], args.folds, args.seed)
    out = Path(args.out or _default_out("ablate"))
    _write_config(out, args, model_config=base.to_dict(), train_config=tcfg.to_dict())
    rows = ablation_suite(prepared, base, tcfg, plan, args.seed, args.parallel, variants, _progress)
    dump_json({"fold_plan": plan.to_dict(), "seed": args.seed, "rows": [r.to_dict() for r in rows]}, out / "ablation.json")
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_hypnogram(args) -> int:
    model = load_model(args.model)
    prepared = {s.subject_id: s for s in _load_prepared(args.data)}
    if args.subject not in prepared:
        raise ValueError(f"subject {args.subject!r} not in {args.data}")
    s = prepared[args.subject]
    _, preds, _ = evaluate(model, [s])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    agreement = export_hypnogram(Hypnogram(s.labels), Hypnogram(preds[s.subject_id]), out)
    print(f"wrote {out} (agreement {agreement:.4f})")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "hypnogram": cmd_hypnogram,
}


def run(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"sleepstage {args.command}: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        where = f": {e.filename}" if getattr(e, "filename", None) else ""
        print(f"sleepstage {args.command}: {e.strerror or e}{where}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, AssertionError) as e:
        print(f"sleepstage {args.command}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
