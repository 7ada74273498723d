import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import auc_threshold_sweep, icc31_regression, pearson_direct, rolling_max_loop
from painpair.metrics import (UndefinedMetricError, average_precision, binary_metrics, f1_score,
                              icc31, pearson, roc_auc, rolling_window_max, split_folds,
                              window_frames)


def random_binary(rng):
    n = int(rng.integers(2, 60))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    # coarse scores so ties are common
    scores = rng.integers(0, int(rng.integers(2, 12)), n).astype(float)
    return scores, labels


def test_auc_matches_threshold_sweep():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s, y = random_binary(rng)
        assert abs(roc_auc(s, y) - auc_threshold_sweep(s, y)) < 1e-9


def test_auc_known_values():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([1, 1, 1], [0, 1, 1]) == 0.5


def test_average_precision_known_value():
    # ranking 1, 0, 1: precision 1 at recall 1/2, 2/3 at recall 1
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)


def test_average_precision_ties_grouped():
    assert average_precision([1, 1, 0], [1, 0, 0]) == pytest.approx(0.5)


def test_single_class_raises():
    with pytest.raises(UndefinedMetricError):
        roc_auc([1, 2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        average_precision([1, 2], [0, 0])


def test_binary_metrics_single_class_warns():
    with pytest.warns(RuntimeWarning):
        m = binary_metrics([0.5, 1.0], [0, 0])
    assert np.isnan(m.auc) and np.isnan(m.ap)
    assert m.f1 == 0.0


def test_f1():
    assert f1_score([1, 1, 0, 0], [1, 0, 1, 0]) == 0.5
    assert f1_score([0, 0], [0, 0]) == 0.0


def test_icc_matches_anova_regression():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(3, 40))
        truth = rng.normal(0, 2, n)
        a = truth + rng.normal(0, 1, n)
        b = truth + rng.normal(0.5, 1, n)
        assert abs(icc31(a, b) - icc31_regression(a, b)) < 1e-10


def test_icc_perfect_agreement_with_offset():
    a = np.arange(10.0)
    assert icc31(a, a + 3) == pytest.approx(1.0)


@settings(max_examples=200)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40), st.integers(0, 2**31))
def test_pearson_matches_formula(x, seed):
    y = np.random.default_rng(seed).normal(size=len(x))
    x = np.asarray(x)
    if np.ptp(x) < 1e-3:
        return
    assert abs(pearson(x, y) - pearson_direct(x.tolist(), y.tolist())) < 1e-12 * max(
        1.0, len(x))


def test_pearson_constant_raises():
    with pytest.raises(UndefinedMetricError):
        pearson([1, 1, 1], [1, 2, 3])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.integers(1, 50))
def test_rolling_max_matches_loop(x, w):
    if w > len(x):
        with pytest.raises(ValueError):
            rolling_window_max(x, w)
        return
    assert rolling_window_max(x, w).tolist() == rolling_max_loop(x, w)


def test_window_frames():
    assert window_frames(15, 1) == 15
    assert window_frames(30, 20) == 600


def random_cohorts(rng, k):
    counts = {c: int(rng.integers(k, 4 * k)) for c in ("Dementia", "Control", "UNBC")
              if rng.random() < 0.8} or {"Dementia": k}
    return {f"{c}-{i}": c for c, n in counts.items() for i in range(n)}


def check_folds(cohorts, folds, k):
    assert set(folds) == set(cohorts)                                  # covering
    assert all(0 <= f < k for f in folds.values())                     # each in exactly one fold
    for c in set(cohorts.values()):
        sizes = np.bincount([folds[s] for s, cc in cohorts.items() if cc == c], minlength=k)
        assert sizes.max() - sizes.min() <= 1                          # cohort-balanced


def test_fold_splitter_random_configurations():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        cohorts = random_cohorts(rng, k)
        seed = int(rng.integers(1 << 30))
        folds = split_folds(cohorts, k, seed)
        check_folds(cohorts, folds, k)
        assert split_folds(cohorts, k, seed) == folds


def test_fold_splitter_from_records(synthetic_set):
    records, _ = synthetic_set
    folds = split_folds(records, 3, seed=0)
    assert sorted(np.bincount(list(folds.values()))) == [2, 2, 2]


def test_fold_splitter_too_few_subjects():
    with pytest.raises(ValueError, match="fewer than"):
        split_folds({"a": "Dementia", "b": "Dementia"}, k=3)


def test_no_warnings_for_two_class_metrics():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        binary_metrics([0, 3, 1, 4], [0, 2, 1, 5])
