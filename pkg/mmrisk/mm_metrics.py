#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import auc as sklearn_auc
from sklearn.metrics import roc_curve

from mmrisk.mm_exceptions import ShapeError, UndefinedMetricError

DEFAULT_THRESHOLD = 0.5
REPORT_KEYS = ('auc', 'misclassification_rate', 'precision', 'recall', 'f1', 'threshold', 'n')
SUMMARY_METRICS = ('auc', 'misclassification_rate', 'precision', 'recall', 'f1')


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"Confusion counts must be non-negative: {self}")

    def __repr__(self):
        return f"ConfusionCounts(tp={self.tp}, fp={self.fp}, tn={self.tn}, fn={self.fn})"

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Ratio:
    """
    Metric value plus a flag telling whether its denominator was zero (value is then 0)
    """
    value: float
    defined: bool = True

    def __float__(self):
        return self.value


def _as_scores_labels(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"Scores of shape {scores.shape} do not match labels of shape {labels.shape}")
    if not np.all(np.isin(labels, (0, 1))):
        raise ShapeError("Labels must be 0 or 1!")
    return scores, labels.astype(np.int64)


def confusion(scores: Sequence[float], labels: Sequence[int], threshold: float = DEFAULT_THRESHOLD) -> ConfusionCounts:
    scores, labels = _as_scores_labels(scores, labels)
    if scores.size == 0:
        raise ShapeError("Cannot tally an empty prediction set!")
    predicted = scores >= threshold
    positive = labels == 1
    return ConfusionCounts(tp=int(np.sum(predicted & positive)),
                           fp=int(np.sum(predicted & ~positive)),
                           tn=int(np.sum(~predicted & ~positive)),
                           fn=int(np.sum(~predicted & positive)))


def _ratio(num: float, den: float) -> Ratio:
    if den == 0:
        return Ratio(0.0, defined=False)
    return Ratio(num / den)


def precision(c: ConfusionCounts) -> Ratio:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> Ratio:
    return _ratio(c.tp, c.tp + c.fn)


def f1(c: ConfusionCounts) -> Ratio:
    p, r = precision(c), recall(c)
    if not (p.defined and r.defined):
        return Ratio(0.0, defined=False)
    return _ratio(2.0 * p.value * r.value, p.value + r.value)


def misclassification_rate(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetricError("Misclassification rate of an empty evaluation set is undefined!")
    return (c.fp + c.fn) / c.total


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Normalized Mann-Whitney statistic: P(score of a random positive > score of a random negative),
    ties counted one half
    """
    scores, labels = _as_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC needs both classes, got {n_pos} positive and {n_neg} negative examples")
    ranks = rankdata(scores, method='average')
    u_stat = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def trapezoid_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Trapezoidal integration of the ROC curve over unique thresholds
    """
    fpr, tpr, _ = roc_points(scores, labels)
    return float(sklearn_auc(fpr, tpr))


def roc_points(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    scores, labels = _as_scores_labels(scores, labels)
    if labels.min(initial=1) == labels.max(initial=0):
        raise UndefinedMetricError("ROC curve needs both classes!")
    fpr, tpr, thresholds = roc_curve(labels, scores, drop_intermediate=False)
    return fpr, tpr, thresholds


@dataclass(frozen=True)
class MetricsReport:
    auc: Optional[float]
    misclassification_rate: float
    precision: float
    recall: float
    f1: float
    threshold: float
    n: int
    undefined: Tuple[str, ...] = tuple()

    def __repr__(self):
        auc_str = 'undefined' if self.auc is None else f"{self.auc:.4f}"
        return f"MetricsReport(auc={auc_str}, misclassification_rate={self.misclassification_rate:.4f}, " \
               f"precision={self.precision:.4f}, recall={self.recall:.4f}, f1={self.f1:.4f}, n={self.n})"

    @property
    def auc_defined(self) -> bool:
        return self.auc is not None

    def to_dict(self) -> Dict[str, object]:
        return {key: getattr(self, key) for key in REPORT_KEYS}


def evaluate(scores: Sequence[float], labels: Sequence[int], threshold: float = DEFAULT_THRESHOLD) -> MetricsReport:
    counts = confusion(scores, labels, threshold)
    undefined = []
    try:
        auc_value = auc(scores, labels)
    except UndefinedMetricError as err:
        logging.warning(f"{err}")
        auc_value = None
        undefined.append('auc')
    p, r, f = precision(counts), recall(counts), f1(counts)
    for name, ratio in (('precision', p), ('recall', r), ('f1', f)):
        if not ratio.defined:
            undefined.append(name)
    return MetricsReport(auc=auc_value, misclassification_rate=misclassification_rate(counts),
                         precision=p.value, recall=r.value, f1=f.value, threshold=float(threshold),
                         n=counts.total, undefined=tuple(undefined))


def summarize(reports: Sequence[MetricsReport]) -> Dict[str, Dict[str, float]]:
    """
    Mean and sample standard deviation of every metric over the folds where it is defined;
    a fold listing the metric in `undefined` (zero denominator, single class) is left out
    """
    summary = {}
    for metric in SUMMARY_METRICS:
        values = np.array([getattr(r, metric) for r in reports
                           if metric not in r.undefined and getattr(r, metric) is not None], dtype=np.float64)
        if values.size == 0:
            summary[metric] = {'mean': None, 'sd': None, 'n_defined': 0}
            continue
        sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        summary[metric] = {'mean': float(np.mean(values)), 'sd': sd, 'n_defined': int(values.size)}
    return summary
