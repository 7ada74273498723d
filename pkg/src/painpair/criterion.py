"""Empirical PSPI cutoff for "pain" from range-of-motion trials.

Trials are labelled painful from self-report (VAS >= 5) or observer rating
(>= 3); an ROC analysis of PSPI against those labels suggests the cutoff
maximizing Youden's J (sensitivity + specificity - 1).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .metrics import UndefinedMetricError, pearson, roc_auc

VAS_CUT = 5.0
OBSERVER_CUT = 3.0
SIDES = ("affected", "unaffected")
SOURCES = ("vas", "observer")
_RANGES = {"vas": (0.0, 10.0), "observer": (0.0, 5.0), "pspi": (0.0, 16.0)}


@dataclass(frozen=True)
class TrialRecord:
    test_name: str
    side: str
    vas: float
    observer: float
    pspi: float

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")


def no_pain_interval(unaffected_ratings, level: float = 0.99):
    """(mean, lower, upper): two-sided t confidence interval of the mean."""
    x = np.asarray(unaffected_ratings, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 ratings")
    mean = float(x.mean())
    sem = float(x.std(ddof=1)) / np.sqrt(x.size)
    half = float(stats.t.ppf(0.5 + level / 2.0, df=x.size - 1)) * sem
    return mean, mean - half, mean + half


def label_trials(trials, vas_cut: float = VAS_CUT, obs_cut: float = OBSERVER_CUT,
                 source: str = "vas") -> np.ndarray:
    if source == "vas":
        return np.array([int(t.vas >= vas_cut) for t in trials])
    if source == "observer":
        return np.array([int(t.observer >= obs_cut) for t in trials])
    raise ValueError(f"source must be one of {SOURCES}, got {source!r}")


def youden_cutoff(scores, labels):
    """Threshold t (predict pain iff score >= t) maximizing J; ties go to the lower t."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels) > 0
    n1, n0 = int(y.sum()), int((~y).sum())
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("cutoff undefined with a single class")
    best_t, best_j = None, -np.inf
    for t in np.unique(s):
        pred = s >= t
        j = (pred & y).sum() / n1 + (~pred & ~y).sum() / n0 - 1.0
        if j > best_j + 1e-12:
            best_t, best_j = float(t), float(j)
    return best_t, best_j


class CriterionResult(NamedTuple):
    r: float
    auc: float
    suggested_cutoff: float


def derive_criterion(trials, source: str = "vas", vas_cut: float = VAS_CUT,
                     obs_cut: float = OBSERVER_CUT) -> CriterionResult:
    """Pearson r (PSPI vs measure), ROC AUC of PSPI, and the Youden-optimal PSPI cutoff.

    A single-class labelling raises UndefinedMetricError carrying ``r`` as ``.r``.
    """
    pspi = np.array([t.pspi for t in trials], dtype=np.float64)
    measure = np.array([getattr(t, source) for t in trials], dtype=np.float64)
    labels = label_trials(trials, vas_cut, obs_cut, source)
    try:
        r = pearson(pspi, measure)
    except UndefinedMetricError:
        r = float("nan")
    try:
        auc = roc_auc(pspi, labels)
    except UndefinedMetricError as e:
        err = UndefinedMetricError(f"{e} (r={r:.3f})")
        err.r = r
        raise err from None
    cutoff, _ = youden_cutoff(pspi, labels)
    return CriterionResult(r, auc, cutoff)


def load_trials(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out.append(TrialRecord(row["test_name"].strip(), row["side"].strip(),
                                       float(row["vas"]), float(row["observer"]),
                                       float(row["pspi"])))
            except (KeyError, ValueError, AttributeError) as e:
                raise ValueError(f"{path} row {line}: {e}") from None
    return out


def write_trials(path, trials) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["test_name", "side", "vas", "observer", "pspi"])
        for t in trials:
            w.writerow([t.test_name, t.side, t.vas, t.observer, t.pspi])


def criterion_report(trials, source: str = "vas") -> list:
    """One row per test: r, AUC, Crit (None where undefined), plus the no-pain interval."""
    rows = []
    by_test = {}
    for t in trials:
        by_test.setdefault(t.test_name, []).append(t)
    for name, group in by_test.items():
        row = {"test_name": name, "n": len(group), "r": None, "auc": None, "crit": None}
        try:
            res = derive_criterion(group, source)
            row.update(r=res.r, auc=res.auc, crit=res.suggested_cutoff)
        except UndefinedMetricError as e:
            row["r"] = getattr(e, "r", None)
        unaffected = [getattr(t, source) for t in group if t.side == "unaffected"]
        if len(unaffected) >= 2:
            mean, lo, hi = no_pain_interval(unaffected)
            row.update(no_pain_mean=mean, no_pain_lower=lo, no_pain_upper=hi)
        rows.append(row)
    return rows


def write_criterion_report(path, rows) -> None:
    cols = ["test_name", "n", "r", "auc", "crit", "no_pain_mean", "no_pain_lower", "no_pain_upper"]

    def fmt(v):
        if v is None or (isinstance(v, float) and np.isnan(v)):
            return "?"
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in cols])


def separable_trials(n_per_class: int = 20, seed: int = 0, test_name: str = "synthetic") -> list:
    """Fixture: painful trials with PSPI in 4..8 (VAS >= 5, observer >= 3), others 0..2."""
    rng = np.random.default_rng(seed)
    trials = []
    for _ in range(n_per_class):
        trials.append(TrialRecord(test_name, "affected", float(rng.uniform(5, 10)),
                                  float(rng.integers(3, 6)), float(rng.integers(4, 9))))
        trials.append(TrialRecord(test_name, "unaffected", float(rng.uniform(0, 4.9)),
                                  float(rng.integers(0, 3)), float(rng.integers(0, 3))))
    return trials
