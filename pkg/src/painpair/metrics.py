"""Regression, classification and agreement metrics, rolling windows, subject folds."""
from __future__ import annotations

import warnings
from collections import defaultdict
from typing import Mapping, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

PAIN_THRESHOLD = 2.0


class UndefinedMetricError(ValueError):
    pass


def _pair(a, b, min_len):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {a.size}")
    return a, b


def pearson(preds, gts) -> float:
    x, y = _pair(preds, gts, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("correlation undefined for a constant series")
    r = (dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney rank statistic with mid-ranks for ties."""
    s, y = _pair(scores, labels, 1)
    pos = y > 0
    n1 = int(pos.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUC undefined with a single class")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def average_precision(scores, labels) -> float:
    """Step-wise AP: sum over distinct thresholds of (R_k - R_{k-1}) * P_k."""
    s, y = _pair(scores, labels, 1)
    pos = y > 0
    n1 = int(pos.sum())
    if n1 == 0 or n1 == y.size:
        raise UndefinedMetricError("average precision undefined with a single class")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    tp = np.cumsum(pos[order])
    # last index of each group of tied scores
    ends = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    tp = tp[ends]
    precision = tp / (ends + 1.0)
    recall = tp / n1
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def f1_score(pred_labels, true_labels) -> float:
    p, t = _pair(pred_labels, true_labels, 1)
    p = p > 0
    t = t > 0
    tp = np.sum(p & t)
    denom = 2 * tp + np.sum(p & ~t) + np.sum(~p & t)
    return float(2 * tp / denom) if denom else 0.0


class BinaryMetrics(NamedTuple):
    f1: float
    ap: float
    auc: float


def binary_metrics(preds, gts, threshold: float = PAIN_THRESHOLD) -> BinaryMetrics:
    """F1 of thresholded predictions; AP and AUC of raw predictions vs gts >= threshold.

    AP and AUC are NaN (with a warning) when the ground truth has one class.
    """
    p, g = _pair(preds, gts, 1)
    labels = (g >= threshold).astype(float)
    f1 = f1_score(p >= threshold, labels)
    try:
        ap = average_precision(p, labels)
        auc = roc_auc(p, labels)
    except UndefinedMetricError as e:
        warnings.warn(str(e), RuntimeWarning, stacklevel=2)
        ap = auc = float("nan")
    return BinaryMetrics(f1, ap, auc)


def icc31(rater_a, rater_b) -> float:
    """ICC(3,1): two-way mixed, consistency, single measure, k = 2 raters."""
    a, b = _pair(rater_a, rater_b, 3)
    y = np.column_stack([a, b])
    n, k = y.shape
    grand = y.mean()
    ss_rows = k * np.sum((y.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((y.mean(axis=0) - grand) ** 2)
    ss_total = np.sum((y - grand) ** 2)
    ss_err = ss_total - ss_rows - ss_cols
    bms = ss_rows / (n - 1)
    ems = ss_err / ((n - 1) * (k - 1))
    denom = bms + (k - 1) * ems
    if ss_rows == 0 or denom == 0:
        raise UndefinedMetricError("ICC undefined with zero between-target variance")
    return float((bms - ems) / denom)


def rolling_window_max(series, window: int) -> np.ndarray:
    """out[i] = max(series[i:i + window]), length n - window + 1."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > x.size:
        raise ValueError(f"window {window} longer than series of length {x.size}")
    return sliding_window_view(x, window).max(axis=1)


def window_frames(fps: float, seconds: float) -> int:
    return max(1, int(round(fps * seconds)))


def split_folds(records, k: int = 5, seed: int = 0) -> dict:
    """Assign whole subjects to ``k`` folds, balancing every cohort across folds.

    ``records`` is a sequence of AnnotationRecord (cohort = dataset_id) or a
    mapping subject_id -> cohort. Returns subject_id -> fold index.
    """
    if isinstance(records, Mapping):
        cohort_of = dict(records)
    else:
        cohort_of = {}
        for r in records:
            prev = cohort_of.setdefault(r.subject_id, r.dataset_id)
            if prev != r.dataset_id:
                raise ValueError(f"subject {r.subject_id} appears in two cohorts")
    members = defaultdict(list)
    for sid, cohort in cohort_of.items():
        if cohort is None:
            raise ValueError(f"subject {sid} has no cohort label")
        members[cohort].append(sid)
    rng = np.random.default_rng([int(seed), 19])
    folds = {}
    offset = 0
    for cohort in sorted(members):
        subjects = sorted(members[cohort])
        if len(subjects) < k:
            raise ValueError(f"cohort {cohort!r} has {len(subjects)} subjects, fewer than k={k}")
        for j, idx in enumerate(rng.permutation(len(subjects))):
            folds[subjects[idx]] = (offset + j) % k
        # continue the round-robin so fold totals stay balanced too
        offset = (offset + len(subjects)) % k
    return folds
