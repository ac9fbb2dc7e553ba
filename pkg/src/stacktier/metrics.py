"""Threshold and ranking metrics for binary scores."""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import DataError

REPORT_COLUMNS = ("Accuracy", "F1 Score", "Recall", "Precision", "ROC-AUC", "AUPRC")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ThresholdMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False
    recall_undefined: bool = False


@dataclass(frozen=True)
class MetricReport:
    """The six reported metrics, in report column order."""

    accuracy: float
    f1: float
    recall: float
    precision: float
    roc_auc: float
    auprc: float

    def as_row(self) -> list[str]:
        return [f"{v:.4f}" for v in astuple(self)]

    def as_dict(self) -> dict[str, float]:
        return {col: round(getattr(self, f.name), 4)
                for col, f in zip(REPORT_COLUMNS, fields(self))}


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    if scores.size == 0:
        raise DataError("empty input")
    return scores, labels.astype(bool)


def confusion_at_threshold(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with a positive prediction iff ``score >= threshold``."""
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return ConfusionCounts(tp=tp, fp=fp, tn=labels.size - tp - fp - fn, fn=fn)


def threshold_metrics(c: ConfusionCounts) -> ThresholdMetrics:
    if c.total <= 0:
        raise DataError("empty input")
    accuracy = (c.tp + c.tn) / c.total
    p_undef = c.tp + c.fp == 0
    r_undef = c.tp + c.fn == 0
    precision = 0.0 if p_undef else c.tp / (c.tp + c.fp)
    recall = 0.0 if r_undef else c.tp / (c.tp + c.fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return ThresholdMetrics(accuracy, precision, recall, f1, p_undef, r_undef)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(positive outranks negative), ties counting one half."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC-AUC needs both classes")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    # 1-based average ranks for tie blocks
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], s.size]
    ranks = np.empty(s.size)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise AP over descending score blocks; ties form a single cut point."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    ends = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = np.cumsum(l)[ends]
    seen = ends + 1
    d_tp = np.diff(np.r_[0, tp])
    ap = 0.0
    for dt, t, k in zip(d_tp, tp, seen):
        if dt:
            ap += (dt / n_pos) * (t / k)
    return float(ap)


def full_report(scores, labels, threshold: float = 0.5) -> MetricReport:
    tm = threshold_metrics(confusion_at_threshold(scores, labels, threshold))
    return MetricReport(
        accuracy=tm.accuracy,
        f1=tm.f1,
        recall=tm.recall,
        precision=tm.precision,
        roc_auc=roc_auc(scores, labels),
        auprc=average_precision(scores, labels),
    )


def report_csv(rows: list[tuple[str, MetricReport]], key: str = "Model") -> str:
    lines = [",".join([key, *REPORT_COLUMNS])]
    lines += [",".join([name, *r.as_row()]) for name, r in rows]
    return "\n".join(lines) + "\n"
