"""Glue for end-to-end runs: preprocess a cohort, split it, train all three models."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .datapipe import (
    Manifest,
    SplitAssignment,
    generate_synthetic,
    oversample_minority,
    split_manifest,
)
from .edf_io import parse_edf
from .metrics import evaluate
from .models import build_bilstm_model, build_residual_cnn, predict_proba
from .preprocess import design_bandpass, preprocess_recording, recording_from_edf
from .trainer import (
    Dataset,
    parameter_digest,
    save_checkpoint,
    train,
    train_ensemble,
    write_history,
)

log = logging.getLogger(__name__)


def prepare_cohort(manifest: Manifest, read_bytes, config: RunConfig, threads=1):
    """Preprocess every manifest entry; ``read_bytes(file_path)`` supplies EDF bytes.

    Returns ``{file_path: PreparedRecording}`` in manifest order.
    """
    pc = config.preprocess
    coeffs = design_bandpass(pc.sample_rate, pc.low_hz, pc.high_hz, pc.filter_order)

    def one(entry):
        raw = recording_from_edf(parse_edf(read_bytes(entry.file_path)),
                                 entry.patient_id, entry.label)
        return preprocess_recording(raw, pc, coeffs, file_path=entry.file_path)

    entries = list(manifest)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]
    return {e.file_path: r for e, r in zip(entries, results)}


def to_dataset(entries, prepared) -> Dataset:
    entries = list(entries)
    return Dataset(np.stack([prepared[e.file_path].window for e in entries]),
                   [e.target for e in entries])


def split_datasets(manifest, split: SplitAssignment, prepared, seed):
    """Train/val/test Datasets; oversampling is applied to train and val separately."""
    train_e = oversample_minority(split.entries(manifest, "train"), seed)
    val_e = oversample_minority(split.entries(manifest, "val"), seed + 1)
    test_e = split.entries(manifest, "test")
    return (to_dataset(train_e, prepared), to_dataset(val_e, prepared),
            to_dataset(test_e, prepared), test_e)


@dataclass
class ExperimentResult:
    histories: dict
    checkpoints: dict
    test_entries: list
    probs: dict  # model -> test probabilities
    reports: dict  # model -> (ConfusionMatrix, MetricReport)
    frozen_ok: bool
    trainable_head: int
    files: dict = field(default_factory=dict)


def run_experiment(config: RunConfig, out_dir=None) -> ExperimentResult:
    """Synthesize, preprocess, split, train CNN, Bi-LSTM and ensemble, evaluate on test."""
    seed = config.run.seed
    data = generate_synthetic(config.synth)
    blobs = data.edf_bytes()
    prepared = prepare_cohort(data.manifest, blobs.__getitem__, config, config.run.threads)
    split = split_manifest(data.manifest, config.split.test_fractions, config.split.val_frac,
                           seed, val_by_patient=config.split.val_by_patient)
    train_set, val_set, test_set, test_entries = split_datasets(
        data.manifest, split, prepared, seed)

    dtype = config.train.dtype
    cnn = build_residual_cnn(config.cnn, seed=seed, dtype=dtype)
    lstm = build_bilstm_model(config.lstm, seed=seed + 1, dtype=dtype)
    h_cnn, ck_cnn = train(cnn, train_set, val_set, config.train)
    h_lstm, ck_lstm = train(lstm, train_set, val_set, config.train)
    before = (parameter_digest(ck_cnn.restore()), parameter_digest(ck_lstm.restore()))
    h_ens, ck_ens, ensemble = train_ensemble(ck_cnn, ck_lstm, train_set, val_set,
                                             config.ensemble_train, config.ensemble)
    frozen_ok = before == (parameter_digest(ensemble.cnn), parameter_digest(ensemble.lstm))

    probs = {
        "cnn": predict_proba(ensemble.cnn, test_set.x),
        "lstm": predict_proba(ensemble.lstm, test_set.x),
        "ensemble": predict_proba(ensemble, test_set.x),
    }
    reports = {m: evaluate(p, test_set.y, config.run.threshold) for m, p in probs.items()}
    trainable = sum(p.size for p in ensemble.parameters if p.trainable)
    result = ExperimentResult(
        histories={"cnn": h_cnn, "lstm": h_lstm, "ensemble": h_ens},
        checkpoints={"cnn": ck_cnn, "lstm": ck_lstm, "ensemble": ck_ens},
        test_entries=test_entries, probs=probs, reports=reports,
        frozen_ok=frozen_ok, trainable_head=trainable,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("cnn", "lstm", "ensemble"):
            ck_path = out / f"{name}.ckpt"
            hist_path = out / f"{name}_history.csv"
            save_checkpoint(result.checkpoints[name], ck_path)
            write_history(result.histories[name], hist_path)
            result.files[name] = (ck_path, hist_path)
        (out / "effective.cfg").write_text(config.to_text(), encoding="utf-8")
    return result
