"""Confusion matrix, precision/recall/F1 and expected calibration error."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, class_names=None) -> str:
        names = list(class_names) if class_names is not None else [str(i) for i in range(self.n_classes)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, self.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()


def confusion_matrix(preds, labels, n: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ContractError(f"{preds.size} predictions vs {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ContractError(f"{name} index out of range [0, {n})")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


@dataclass
class ClassificationReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    # True where the ratio had a zero denominator and was reported as 0
    precision_undefined: np.ndarray
    recall_undefined: np.ndarray
    f1_undefined: np.ndarray
    # classes with neither true samples nor predictions are left out of the macro means
    present: np.ndarray
    macro_precision: float = field(init=False)
    macro_recall: float = field(init=False)
    macro_f1: float = field(init=False)

    def __post_init__(self):
        keep = self.present
        self.macro_precision = float(self.precision[keep].mean())
        self.macro_recall = float(self.recall[keep].mean())
        self.macro_f1 = float(self.f1[keep].mean())


def _safe_ratio(num, den):
    undefined = den == 0
    out = np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=~undefined)
    return out, undefined


def prf1(cm: ConfusionMatrix) -> ClassificationReport:
    counts = np.asarray(cm.counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {counts.shape}")
    total = counts.sum()
    if total == 0:
        raise ContractError("confusion matrix is empty")
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    precision, p_undef = _safe_ratio(tp, predicted)
    recall, r_undef = _safe_ratio(tp, actual)
    f1, f_undef = _safe_ratio(2.0 * precision * recall, precision + recall)
    return ClassificationReport(
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        precision_undefined=p_undef,
        recall_undefined=r_undef,
        f1_undefined=f_undef,
        present=(predicted + actual) > 0,
    )


@dataclass
class ReliabilityBin:
    lower: float
    upper: float
    mean_confidence: float
    accuracy: float
    count: int


@dataclass
class ReliabilityTable:
    bins: list[ReliabilityBin]
    ece: float

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lower", "bin_upper", "mean_confidence", "accuracy", "count"])
        for b in self.bins:
            w.writerow([repr(b.lower), repr(b.upper), repr(b.mean_confidence), repr(b.accuracy), b.count])
        return buf.getvalue()


def ece(probs, labels, bins: int = 15) -> ReliabilityTable:
    """Equal-width binning on max probability.

    Bins are ``(lo, hi]`` so a confidence on an edge goes to the lower bin;
    the first bin also takes an exact 0.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if bins < 1:
        raise ContractError(f"need at least one bin, got {bins}")
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} do not match")
    if probs.shape[0] and np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("probability rows must sum to 1 within 1e-6")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)

    n = conf.size
    table, gap = [], 0.0
    for b in range(bins):
        sel = idx == b
        count = int(sel.sum())
        mean_conf = float(conf[sel].mean()) if count else 0.0
        acc = float(correct[sel].mean()) if count else 0.0
        if count:
            gap += count / n * abs(acc - mean_conf)
        table.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]), mean_conf, acc, count))
    return ReliabilityTable(table, float(gap))
