"""Threshold-free detection metrics with ID as the positive class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class DetectionResult:
    scores: np.ndarray
    labels: np.ndarray
    method: str = ""

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if s.shape != y.shape or s.ndim != 1:
            raise ValueError("scores and labels must be equal-length vectors")
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("labels must be 0 (OOD) or 1 (ID)")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int64))


@dataclass(frozen=True)
class Metrics:
    auroc: float
    aupr: float
    fpr95: float

    def as_dict(self) -> dict:
        return {"auroc": self.auroc, "aupr": self.aupr, "fpr95": self.fpr95}


def _split(r: DetectionResult):
    pos = r.scores[r.labels == 1]
    neg = r.scores[r.labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("metrics need at least one ID and one OOD score")
    return pos, neg


def auroc_counts(pos: np.ndarray, neg: np.ndarray) -> tuple[int, int]:
    """``(#{pos > neg}, #{pos == neg})`` over all ID/OOD pairs, in O(n log n)."""
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    not_above = np.searchsorted(neg_sorted, pos, side="right")
    return int(below.sum()), int((not_above - below).sum())


def auroc(r: DetectionResult) -> float:
    pos, neg = _split(r)
    gt, eq = auroc_counts(pos, neg)
    return (2 * gt + eq) / (2 * pos.size * neg.size)


def _roc_steps(r: DetectionResult):
    """True and false positive counts at each distinct threshold, high to low."""
    order = np.argsort(-r.scores, kind="stable")
    s, y = r.scores[order], r.labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(1 - y)[last]
    return tp, fp


def aupr(r: DetectionResult) -> float:
    """Average precision: ``sum_k (R_k - R_{k-1}) P_k`` over distinct thresholds."""
    _split(r)
    tp, fp = _roc_steps(r)
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def fpr_at_tpr(r: DetectionResult, level: float = 0.95) -> float:
    """FPR at the first threshold (scanning high to low) whose TPR reaches ``level``."""
    _split(r)
    tp, fp = _roc_steps(r)
    tpr = tp / tp[-1]
    k = int(np.argmax(tpr >= level))
    return float(fp[k] / fp[-1])


def compute_metrics(r: DetectionResult) -> Metrics:
    return Metrics(auroc(r), aupr(r), fpr_at_tpr(r, 0.95))
