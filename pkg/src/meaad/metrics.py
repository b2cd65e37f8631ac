"""Detection metrics. The positive class is 1 (attack)."""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import EmptyInput, LengthMismatch, SingleClass


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    roc_auc: float = float("nan")
    roc_points: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def counts(self):
        return self.tp, self.fp, self.tn, self.fn

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def row(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "roc_auc": self.roc_auc,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }


def _as_labels(labels) -> np.ndarray:
    y = np.asarray(labels).astype(np.int64)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return y


def confusion_and_f1(predictions: Sequence[int], labels: Sequence[int]) -> MetricsReport:
    pred = _as_labels(predictions)
    y = _as_labels(labels)
    if pred.shape != y.shape:
        raise LengthMismatch(f"{pred.shape[0]} predictions vs {y.shape[0]} labels")
    if y.size == 0:
        raise EmptyInput("no samples")
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport((tp + tn) / y.size, precision, recall, f1, tp, fp, tn, fn)


def _check_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = _as_labels(labels)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise SingleClass("ROC needs both classes")
    return s, y


def roc_curve(scores, labels) -> List[Tuple[float, float]]:
    """ROC points from sweeping every distinct score as a threshold (score >= t is positive)."""
    s, y = _check_scores(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.diff(s) != 0)
    ends = np.append(ends, s.size - 1)
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    p, n = int(y.sum()), int(y.size - y.sum())
    points = [(0.0, 0.0)]
    points += [(float(f) / n, float(t) / p) for t, f in zip(tps, fps)]
    return points


def roc_auc(scores, labels):
    """Trapezoidal area under the ROC sweep. Returns ``(auc, roc_points)``."""
    pts = roc_curve(scores, labels)
    fpr = np.array([p[0] for p in pts])
    tpr = np.array([p[1] for p in pts])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return auc, pts


def mann_whitney_auc(scores, labels) -> float:
    """AUC via average ranks (U statistic over P * N), ties counted as 1/2."""
    s, y = _check_scores(scores, labels)
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    p = int(y.sum())
    n = y.size - p
    u = ranks[y == 1].sum() - p * (p + 1) / 2.0
    return float(u / (p * n))


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Full report: confusion counts at ``threshold`` plus ROC-AUC over all thresholds."""
    s = np.asarray(scores, dtype=np.float64)
    report = confusion_and_f1((s >= threshold).astype(np.int64), labels)
    report.roc_auc, report.roc_points = roc_auc(s, labels)
    return report
