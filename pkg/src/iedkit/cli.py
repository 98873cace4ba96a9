"""``iedkit`` command line: synth, preprocess, split, train, train-ensemble,
predict, evaluate, params, agreement.

Exit status is 0 on success, 1 on a domain error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfg
from .datapipe import DataError, SplitAssignment, load_manifest, split_manifest, write_synthetic
from .edf_io import EdfError
from .experiment import prepare_cohort, split_datasets
from .metrics import MetricsError, agreement_partition, evaluate, format_report
from .models import (
    BiLSTMConfig,
    NotTrainedError,
    build_bilstm_model,
    build_ensemble,
    build_residual_cnn,
    count_params,
    predict_proba,
)
from .neuralcore import ShapeMismatchError
from .preprocess import EPILEPTIC, LABELS, PreprocessError
from .prepared import PreparedFormatError, read_prepared, write_prepared
from .trainer import (
    CorruptCheckpointError,
    TrainError,
    VersionMismatchError,
    load_checkpoint,
    save_checkpoint,
    train,
    train_ensemble,
    write_history,
)

log = logging.getLogger("iedkit")

DOMAIN_ERRORS = (
    cfg.ConfigError, DataError, EdfError, PreprocessError, MetricsError, TrainError,
    NotTrainedError, CorruptCheckpointError, VersionMismatchError, PreparedFormatError,
    ShapeMismatchError, FileNotFoundError,
)


class UsageError(Exception):
    pass


def _load_run_config(args) -> cfg.RunConfig:
    config = cfg.load_config(args.config) if args.config else cfg.RunConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.threads is not None:
        config = config.override("run", threads=args.threads)
    if args.threshold is not None:
        config = config.override("run", threshold=args.threshold)
    if getattr(args, "variant", None):
        preset = BiLSTMConfig.named(args.variant)
        config = config.override("lstm", variant=args.variant,
                                 bidirectional=preset.bidirectional, head=preset.head)
    return config


def _write_effective(config, out_dir):
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "effective.cfg").write_text(config.to_text(), encoding="utf-8")


def _out_dir(args, default_file=False):
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    return out.parent if default_file else out


def cmd_synth(args, config):
    out = _out_dir(args)
    data = write_synthetic(config.synth, out)
    _write_effective(config, out)
    print(f"wrote {len(data.files)} recordings and manifest.csv to {out}")


def cmd_preprocess(args, config):
    manifest = load_manifest(args.manifest)
    root = Path(args.manifest).parent
    prepared = prepare_cohort(manifest, lambda p: (root / p).read_bytes(), config,
                              config.run.threads)
    out = Path(args.out or "prepared.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_prepared(prepared.values(), out)
    _write_effective(config, out.parent)
    print(f"wrote {len(prepared)} prepared windows to {out}")


def cmd_split(args, config):
    manifest = load_manifest(args.manifest)
    split = split_manifest(manifest, config.split.test_fractions, config.split.val_frac,
                           config.run.seed, val_by_patient=config.split.val_by_patient)
    out = Path(args.out or "split.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(split.to_csv(manifest), encoding="utf-8")
    _write_effective(config, out.parent)
    counts = {s: len(split.entries(manifest, s)) for s in ("train", "val", "test")}
    print(",".join(f"{k}={v}" for k, v in counts.items()))


def _load_split_data(args, config):
    records = read_prepared(args.prepared)
    prepared = {r.file_path: r for r in records}
    from .datapipe import Manifest, ManifestEntry
    manifest = Manifest([ManifestEntry(r.patient_id, r.file_path, r.label) for r in records])
    split = SplitAssignment.from_csv(Path(args.split).read_text(encoding="utf-8"),
                                     config.run.seed)
    missing = [r.file_path for r in records if r.file_path not in split.assignment]
    if missing:
        raise DataError(f"{len(missing)} prepared records are absent from the split file")
    return split_datasets(manifest, split, prepared, config.run.seed)


def cmd_train(args, config):
    if args.model not in ("residual_cnn", "bilstm"):
        raise UsageError("train needs --model residual_cnn or --model bilstm")
    train_set, val_set, _, _ = _load_split_data(args, config)
    seed = config.run.seed
    dtype = config.train.dtype
    if args.model == "residual_cnn":
        model = build_residual_cnn(config.cnn, seed=seed, dtype=dtype)
    else:
        model = build_bilstm_model(config.lstm, seed=seed + 1, dtype=dtype)
    history, best = train(model, train_set, val_set, config.train)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(best, out / f"{args.model}.ckpt")
    write_history(history, out / f"{args.model}_history.csv")
    _write_effective(config, out)
    print(f"best epoch {best.epoch} val_loss {history[best.epoch].val_loss:.6f}")


def cmd_train_ensemble(args, config):
    if not (args.cnn and args.lstm):
        raise UsageError("train-ensemble needs --cnn and --lstm checkpoints")
    train_set, val_set, _, _ = _load_split_data(args, config)
    history, best, _ = train_ensemble(load_checkpoint(args.cnn), load_checkpoint(args.lstm),
                                      train_set, val_set, config.ensemble_train,
                                      config.ensemble)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(best, out / "ensemble.ckpt")
    write_history(history, out / "ensemble_history.csv")
    _write_effective(config, out)
    print(f"best epoch {best.epoch} val_loss {history[best.epoch].val_loss:.6f}")


def cmd_predict(args, config):
    if not args.ensemble:
        raise UsageError("predict needs --ensemble (its checkpoint holds both sub-models)")
    ensemble = load_checkpoint(args.ensemble).restore()
    records = read_prepared(args.prepared)
    if args.split:
        split = SplitAssignment.from_csv(Path(args.split).read_text(encoding="utf-8"))
        records = [r for r in records if split.assignment.get(r.file_path) == args.subset]
    x = np.stack([r.window for r in records])
    probs = [predict_proba(ensemble.cnn, x), predict_proba(ensemble.lstm, x),
             predict_proba(ensemble, x)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("file", "patient_id", "label", "p_cnn", "p_lstm", "p_ensemble"))
    for i, r in enumerate(records):
        writer.writerow((r.file_path, r.patient_id, r.label,
                         *(repr(float(p[i])) for p in probs)))
    _emit(buf.getvalue(), args.out)


def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _label_value(text):
    text = text.strip()
    if text in LABELS:
        return int(text == EPILEPTIC)
    if text in ("0", "1"):
        return int(text)
    raise DataError(f"unrecognized label {text!r}")


def _read_predictions(args):
    """Return (labels, {model: probs}) from --preds and optional --labels."""
    rows = list(csv.DictReader(io.StringIO(Path(args.preds).read_text(encoding="utf-8"))))
    if not rows:
        raise DataError("prediction file is empty")
    columns = [c for c in rows[0] if c.startswith("p_") or c == "prob"]
    if not columns:
        raise DataError("prediction file has no p_* or prob columns")
    if args.labels:
        label_rows = csv.DictReader(io.StringIO(Path(args.labels).read_text(encoding="utf-8")))
        by_file = {r["file"]: _label_value(r["label"]) for r in label_rows}
        try:
            labels = [by_file[r["file"]] for r in rows]
        except KeyError as exc:
            raise DataError(f"no label for {exc.args[0]}") from None
    elif "label" in rows[0]:
        labels = [_label_value(r["label"]) for r in rows]
    else:
        raise UsageError("labels are required: pass --labels or include a label column")
    probs = {}
    for c in columns:
        name = "model" if c == "prob" else c[2:]
        probs[name] = np.array([float(r[c]) for r in rows])
    return np.array(labels), probs


def cmd_evaluate(args, config):
    labels, probs = _read_predictions(args)
    rows = [(name, *evaluate(p, labels, config.run.threshold)) for name, p in probs.items()]
    _emit(format_report(rows), args.out)


def cmd_agreement(args, config):
    labels, probs = _read_predictions(args)
    try:
        trio = [probs[m] for m in ("cnn", "lstm", "ensemble")]
    except KeyError:
        raise DataError("agreement needs p_cnn, p_lstm and p_ensemble columns") from None
    part = agreement_partition(labels, *trio, threshold=config.run.threshold)
    _emit(part.format(), args.out)


def cmd_params(args, config):
    model_name = args.model or "residual_cnn"
    if model_name == "residual_cnn":
        model = build_residual_cnn(config.cnn)
    elif model_name == "bilstm":
        model = build_bilstm_model(config.lstm)
    else:
        model = build_ensemble(build_residual_cnn(config.cnn), build_bilstm_model(config.lstm),
                               config.ensemble, require_trained=False)
    _emit(count_params(model).format() + "\n", args.out)


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "train": cmd_train,
    "train-ensemble": cmd_train_ensemble,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "params": cmd_params,
    "agreement": cmd_agreement,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file with per-module sections")
    common.add_argument("--seed", type=int, help="seed for every random component")
    common.add_argument("--threads", type=int, help="worker threads for preprocessing")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")
    common.add_argument("--model", choices=("residual_cnn", "bilstm", "ensemble"))
    common.add_argument("--variant", choices=("paper-text", "paper-count"),
                        help="Bi-LSTM reading")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="iedkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    p = {name: sub.add_parser(name, parents=[common]) for name in COMMANDS}
    p["preprocess"].add_argument("--manifest", required=True)
    p["split"].add_argument("--manifest", required=True)
    for name in ("train", "train-ensemble", "predict"):
        p[name].add_argument("--prepared", required=True, help="PREP1 file of windows")
    for name in ("train", "train-ensemble"):
        p[name].add_argument("--split", required=True, help="split CSV from `iedkit split`")
    p["train-ensemble"].add_argument("--cnn", help="residual CNN checkpoint")
    p["train-ensemble"].add_argument("--lstm", help="Bi-LSTM checkpoint")
    p["predict"].add_argument("--ensemble", help="ensemble checkpoint")
    p["predict"].add_argument("--split", help="restrict to one subset of this split CSV")
    p["predict"].add_argument("--subset", default="test", choices=("train", "val", "test"))
    for name in ("evaluate", "agreement"):
        p[name].add_argument("--preds", required=True, help="CSV with file and p_* columns")
        p[name].add_argument("--labels", help="CSV with file,label columns")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_run_config(args)
        COMMANDS[args.command](args, config)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"iedkit: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"iedkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
