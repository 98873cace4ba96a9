"""Evaluation arithmetic: confusion counts, derived rates, ROC-AUC, agreement, confidence."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "MetricsError",
    "LengthMismatchError",
    "SingleClassError",
    "DegenerateDenominatorError",
    "ConfusionMatrix",
    "MetricReport",
    "AgreementPartition",
    "ClassConfidence",
    "ConfidenceSummary",
    "confusion",
    "metrics_from_confusion",
    "roc_auc",
    "evaluate",
    "agreement_partition",
    "confidence_summary",
    "format_report",
]

MODELS = ("cnn", "lstm", "ensemble")


class MetricsError(ValueError):
    pass


class LengthMismatchError(MetricsError):
    pass


class SingleClassError(MetricsError):
    pass


class DegenerateDenominatorError(MetricsError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with epileptic as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def format(self):
        return f"tn,fp,fn,tp\n{self.tn},{self.fp},{self.fn},{self.tp}"


@dataclass(frozen=True)
class MetricReport:
    """Rates in [0, 1]; a field is None when its denominator is zero."""

    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    auc: float | None = None

    def line(self, model):
        values = (self.auc, self.accuracy, self.sensitivity, self.specificity, self.f1)
        cells = ["nan" if v is None else f"{v:.4f}" for v in values]
        return ",".join([model, *cells])


def _check_lengths(*arrays):
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise LengthMismatchError(f"inputs have different lengths: {sorted(lengths)}")


def _labels(labels):
    labels = np.asarray(labels)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise MetricsError("labels must be 0 or 1")
    return labels.astype(int)


def confusion(probs, labels, threshold=0.5) -> ConfusionMatrix:
    """Tally predictions, calling a recording positive when prob >= threshold."""
    _check_lengths(probs, labels)
    pred = np.asarray(probs, dtype=np.float64) >= threshold
    truth = _labels(labels) == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & truth)), tn=int(np.sum(~pred & ~truth)),
        fp=int(np.sum(pred & ~truth)), fn=int(np.sum(~pred & truth)),
    )


def _ratio(num, den, name, strict):
    if den == 0:
        if strict:
            raise DegenerateDenominatorError(f"{name} is undefined: zero denominator")
        return None
    return num / den


def metrics_from_confusion(cm: ConfusionMatrix, strict=False) -> MetricReport:
    """Accuracy, sensitivity, specificity and F1 from counts.

    Zero denominators give None, or raise with ``strict``.
    """
    return MetricReport(
        accuracy=_ratio(cm.tp + cm.tn, cm.total, "accuracy", strict),
        sensitivity=_ratio(cm.tp, cm.tp + cm.fn, "sensitivity", strict),
        specificity=_ratio(cm.tn, cm.tn + cm.fp, "specificity", strict),
        f1=_ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1", strict),
    )


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(pos > neg) + P(tie)/2, with mid-ranks for ties."""
    _check_lengths(scores, labels)
    labels = _labels(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC-AUC needs both classes present")
    ranks = rankdata(scores)  # mid-ranks; all values are multiples of 0.5
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(probs, labels, threshold=0.5):
    """Confusion counts and the full report including AUC (None for one class)."""
    cm = confusion(probs, labels, threshold)
    report = metrics_from_confusion(cm)
    try:
        auc = roc_auc(probs, labels)
    except SingleClassError:
        auc = None
    return cm, MetricReport(report.accuracy, report.sensitivity, report.specificity,
                            report.f1, auc)


def format_report(rows) -> str:
    """``rows`` is an iterable of (model, ConfusionMatrix, MetricReport)."""
    lines = ["model,auc,accuracy,sensitivity,specificity,f1"]
    blocks = []
    for model, cm, report in rows:
        lines.append(report.line(model))
        blocks.append(f"[{model}]\n{cm.format()}")
    return "\n".join(lines + blocks) + "\n"


@dataclass(frozen=True)
class AgreementPartition:
    """Recordings bucketed by which of (cnn, lstm, ensemble) got them right.

    ``cells`` maps a (cnn_ok, lstm_ok, ensemble_ok) tuple to a count; all
    eight tuples are present.
    """

    cells: dict

    @property
    def total(self):
        return sum(self.cells.values())

    @staticmethod
    def cell_name(key):
        ok = [m for m, flag in zip(MODELS, key) if flag]
        return "+".join(ok) if ok else "none"

    def correct_view(self):
        """Regions of the Venn diagram of correct classifications."""
        return {self.cell_name(k): v for k, v in self.cells.items() if any(k)}

    def incorrect_view(self):
        """Regions of the Venn diagram of misclassifications, keyed by who erred."""
        out = {}
        for key, count in self.cells.items():
            if all(key):
                continue
            wrong = [m for m, flag in zip(MODELS, key) if not flag]
            out["+".join(wrong)] = count
        return out

    def format(self):
        lines = ["cnn_correct,lstm_correct,ensemble_correct,count"]
        for key in sorted(self.cells, reverse=True):
            lines.append(",".join(str(int(k)) for k in key) + f",{self.cells[key]}")
        return "\n".join(lines) + "\n"


def agreement_partition(labels, probs_cnn, probs_lstm, probs_ens,
                        threshold=0.5) -> AgreementPartition:
    _check_lengths(labels, probs_cnn, probs_lstm, probs_ens)
    truth = _labels(labels) == 1
    correct = [
        (np.asarray(p, dtype=np.float64) >= threshold) == truth
        for p in (probs_cnn, probs_lstm, probs_ens)
    ]
    cells = {key: 0 for key in itertools.product((True, False), repeat=3)}
    for key in zip(*correct):
        cells[tuple(bool(k) for k in key)] += 1
    return AgreementPartition(cells)


@dataclass(frozen=True)
class ClassConfidence:
    n: int
    mean: float
    lower: float
    upper: float


@dataclass(frozen=True)
class ConfidenceSummary:
    """Mean probability per predicted class with a normal-approximation interval.

    A class nobody was assigned to is None.
    """

    epileptic: ClassConfidence | None
    non_epileptic: ClassConfidence | None
    method: str = "normal-population-sd"


def _summarize(values, z):
    if len(values) == 0:
        return None
    mean = float(np.mean(values))
    half = z * float(np.std(values)) / math.sqrt(len(values))
    return ClassConfidence(len(values), mean, max(0.0, mean - half), min(1.0, mean + half))


def confidence_summary(probs, threshold=0.5, z=1.96) -> ConfidenceSummary:
    """Group predictions by predicted class; report mean +/- z*sd/sqrt(n), clipped to [0, 1]."""
    probs = np.asarray(probs, dtype=np.float64)
    positive = probs >= threshold
    return ConfidenceSummary(_summarize(probs[positive], z), _summarize(probs[~positive], z))
