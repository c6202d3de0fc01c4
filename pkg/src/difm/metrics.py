"""ROC, AUC, McClish-standardized partial AUC, and run-to-run confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DataError, MetricUndefinedError


@dataclass
class RocSummary:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    n_pos: int
    n_neg: int


@dataclass
class MetricReport:
    auc: float
    partial_auc_standardized: float
    max_fpr: float
    n_pos: int
    n_neg: int


def roc_curve(scores, labels) -> RocSummary:
    """ROC points from (0, 0) to (1, 1); equal scores form a single step."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"{scores.size} scores for {labels.size} labels")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    pos = labels.astype(bool)
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(f"ROC needs both classes (got {n_pos} positive, {n_neg} negative)")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    # last position of every run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    fpr = np.r_[0.0, fp[ends] / n_neg]
    tpr = np.r_[0.0, tp[ends] / n_pos]
    return RocSummary(fpr, tpr, np.r_[np.inf, s[ends]], n_pos, n_neg)


def _head_area(fpr, tpr, max_fpr):
    keep = np.searchsorted(fpr, max_fpr, side="right")
    x, y = fpr[:keep], tpr[:keep]
    if x[-1] < max_fpr:
        x0, x1, y0, y1 = fpr[keep - 1], fpr[keep], tpr[keep - 1], tpr[keep]
        x = np.r_[x, max_fpr]
        y = np.r_[y, y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0)]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def partial_auc(scores, labels, max_fpr: float = 0.01) -> MetricReport:
    """Standardized partial AUC over FPR in [0, max_fpr].

    The ROC head is integrated with the trapezoid rule, cut by linear
    interpolation at ``max_fpr``, then mapped by McClish's correction
    ``(1 + (A - min) / (max - min)) / 2`` with ``min = max_fpr**2 / 2`` and
    ``max = max_fpr``. At ``max_fpr = 1`` this is the plain AUC.
    """
    if not 0.0 < max_fpr <= 1.0:
        raise DataError(f"max_fpr must lie in (0, 1], got {max_fpr}")
    roc = roc_curve(scores, labels)
    full = _head_area(roc.fpr, roc.tpr, 1.0)
    area = _head_area(roc.fpr, roc.tpr, max_fpr)
    lo, hi = 0.5 * max_fpr ** 2, max_fpr
    standardized = 0.5 * (1.0 + (area - lo) / (hi - lo))
    return MetricReport(full, float(standardized), max_fpr, roc.n_pos, roc.n_neg)


def auc(scores, labels) -> float:
    roc = roc_curve(scores, labels)
    return _head_area(roc.fpr, roc.tpr, 1.0)


def confidence_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Student-t interval: ``(mean, t_{(1+level)/2, n-1} * sd / sqrt(n))``."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise DataError(f"confidence interval needs at least 2 values, got {n}")
    sd = float(np.std(values, ddof=1))
    t = float(stats.t.ppf(0.5 + level / 2.0, n - 1))
    return float(values.mean()), t * sd / math.sqrt(n)


def format_ci(mean: float, half_width: float) -> str:
    return f"{mean:.4f}±{half_width:.4f}"


def write_metrics(path, values: dict) -> None:
    with open(path, "w") as fh:
        for key, value in values.items():
            fh.write(f"{key}={value}\n")


def read_metrics(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                out[key.strip()] = value.strip()
    return out
