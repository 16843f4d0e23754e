"""ROC/AUC and confusion-matrix rates."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending; the first is +inf
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


@dataclass
class ConfusionReport:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return 100.0 * (self.tp + self.tn) / self.total

    @property
    def sensitivity(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fn)

    @property
    def specificity(self) -> float:
        return 100.0 * self.tn / (self.tn + self.fp)

    def rounded(self) -> tuple[float, float, float]:
        """Accuracy, sensitivity, specificity to 0.1 %."""
        return round(self.accuracy, 1), round(self.sensitivity, 1), round(self.specificity, 1)


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    y = y.astype(np.int64)
    if y.min(initial=1) == y.max(initial=0) or s.size == 0:
        raise ValueError("both classes must be present")
    return s, y


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    mean_rank = (starts + 1 + ends) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def roc_auc(scores, labels) -> RocCurve:
    """Mann-Whitney AUC (ties count one half) plus the threshold-sweep curve."""
    s, y = _check(scores, labels)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    u = average_ranks(s)[pos].sum() - n_pos * (n_pos + 1) / 2.0
    auc = u / (n_pos * n_neg)

    order = np.argsort(-s, kind="mergesort")
    s_desc, y_desc = s[order], y[order]
    last = np.r_[s_desc[1:] != s_desc[:-1], True]
    tp = np.cumsum(y_desc)[last]
    fp = np.cumsum(1 - y_desc)[last]
    thresholds = np.r_[np.inf, s_desc[last]]
    tpr = np.r_[0, tp] / n_pos
    fpr = np.r_[0, fp] / n_neg
    return RocCurve(thresholds, fpr, tpr, float(auc))


def trapezoid_area(curve: RocCurve) -> float:
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionReport:
    """Counts with a positive call iff ``score >= threshold``."""
    s, y = _check(scores, labels)
    call = s >= threshold
    return ConfusionReport(
        tp=int(np.sum(call & (y == 1))), tn=int(np.sum(~call & (y == 0))),
        fp=int(np.sum(call & (y == 0))), fn=int(np.sum(~call & (y == 1))),
    )


def write_roc_csv(curve: RocCurve, path) -> None:
    """One curve as ``threshold,fpr,tpr`` rows; the opening threshold is written ``inf``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow(["inf" if np.isinf(t) else repr(float(t)), repr(float(f)), repr(float(p))])
