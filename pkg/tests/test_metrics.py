import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cifm.errors import UndefinedCorrelationError, UsageError
from cifm.metrics import (
    DegenerateMetricWarning, accuracy, ari, evaluate_predictions, f1_of_class, global_average, macro_f1,
    macro_recall, paired_t_test, pearson, seed_statistics, spearman, uniformity,
)


def brute_ari(a, b):
    # pair counting over all unordered pairs
    n = len(a)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    ss = sum(1 for i, j in pairs if a[i] == a[j] and b[i] == b[j])
    sd = sum(1 for i, j in pairs if a[i] == a[j] and b[i] != b[j])
    ds = sum(1 for i, j in pairs if a[i] != a[j] and b[i] == b[j])
    total = len(pairs)
    expected = (ss + sd) * (ss + ds) / total
    max_index = ((ss + sd) + (ss + ds)) / 2
    if max_index == expected:
        return None
    return (ss - expected) / (max_index - expected)


def test_macro_f1_hand_cases():
    assert macro_f1(["a", "b", "c"], ["a", "b", "c"]) == 1.0
    assert abs(macro_f1([0, 0, 1, 1], [0, 1, 0, 1]) - 0.5) < 1e-9


def test_macro_f1_subset_is_mean_of_two_classes():
    gold = ["favor", "favor", "against", "none", "none"]
    pred = ["favor", "against", "against", "none", "favor"]
    f_favor = f1_of_class(gold, pred, "favor")
    f_against = f1_of_class(gold, pred, "against")
    assert abs(f_favor - 0.5) < 1e-9
    assert abs(f_against - 2 / 3) < 1e-9
    got = macro_f1(gold, pred, class_subset=["favor", "against"])
    assert abs(got - (f_favor + f_against) / 2) < 1e-9


def test_declared_but_absent_class_scores_zero():
    assert abs(macro_f1(["a", "a"], ["a", "a"], labels=["a", "b"]) - 0.5) < 1e-9
    assert macro_f1(["a", "a"], ["a", "a"]) == 1.0


def test_f1_of_class_hand_confusion():
    # tp=1 fp=1 fn=1 -> 0.5
    assert abs(f1_of_class([1, 1, 0, 0], [1, 0, 1, 0], 1) - 0.5) < 1e-9
    assert f1_of_class([0, 0], [0, 0], 1) == 0.0


def test_macro_recall():
    assert macro_recall([0, 1, 2], [0, 1, 2]) == 1.0
    assert abs(macro_recall([0, 0, 1, 1], [0, 0, 0, 0]) - 0.5) < 1e-9
    # recalls 2/3 and 1/1 and 0/1
    assert abs(macro_recall([0, 0, 0, 1, 2], [0, 0, 1, 1, 1]) - (2 / 3 + 1 + 0) / 3) < 1e-9


def test_empty_input_is_usage_error():
    with pytest.raises(UsageError):
        macro_f1([], [])
    with pytest.raises(UsageError):
        macro_recall([0], [0, 1])


def test_correlations():
    x = [1.0, 2.0, 3.0]
    assert abs(pearson(x, x) - 1.0) < 1e-12
    assert abs(pearson(x, [-v for v in x]) + 1.0) < 1e-12
    assert abs(spearman(x, [1, 4, 9]) - 1.0) < 1e-12
    assert abs(pearson(x, [1, 4, 9]) - 0.9897433186107869) < 1e-9


def test_constant_input_correlation_undefined():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=30),
       st.integers(0, 2**31 - 1))
def test_correlations_match_scipy(xs, seed):
    ys = np.random.default_rng(seed).normal(size=len(xs))
    if np.ptp(xs) < 1e-6:
        return
    assert abs(pearson(xs, ys) - stats.pearsonr(xs, ys)[0]) < 1e-9
    assert abs(spearman(xs, ys) - stats.spearmanr(xs, ys)[0]) < 1e-9


def test_global_average():
    assert abs(global_average([[0.5], [0.7, 0.9]]) - 0.65) < 1e-9
    assert global_average([[0.3]]) == 0.3
    assert global_average([[0.0], [0.0, 0.0]]) == 0.0


def test_paired_t_test():
    with pytest.warns(DegenerateMetricWarning):
        r = paired_t_test([1, 2, 3], [1, 2, 3])
    assert r.degenerate and r.p_value == 1.0
    with pytest.warns(DegenerateMetricWarning):
        r = paired_t_test([2, 4, 6], [1, 3, 5])
    assert r.degenerate
    r = paired_t_test([2, 4, 7], [1, 3, 5])
    ref = stats.ttest_rel([2, 4, 7], [1, 3, 5])
    assert not r.degenerate
    assert abs(r.statistic - ref.statistic) < 1e-9
    assert abs(r.p_value - ref.pvalue) < 1e-9


def test_uniformity_hand_cases():
    assert abs(uniformity([[1.0, 0.0], [-1.0, 0.0]]) + 8.0) < 1e-9
    assert abs(uniformity([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])) < 1e-9
    assert abs(uniformity([[1.0, 0.0], [0.0, 1.0]]) + 4.0) < 1e-9


def test_ari_hand_cases():
    assert ari([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert ari([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert abs(ari([0, 0, 1, 1], [0, 1, 0, 1]) - brute_ari([0, 0, 1, 1], [0, 1, 0, 1])) < 1e-9
    assert abs(ari([0, 0, 1, 1], [0, 1, 0, 1]) + 0.5) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=3, max_size=25))
def test_ari_matches_pair_counting(pairs):
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    expected = brute_ari(a, b)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMetricWarning)
        got = ari(a, b)
    if expected is not None:
        assert abs(got - expected) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_f1_bounds_and_accuracy(pairs):
    gold = [p[0] for p in pairs]
    pred = [p[1] for p in pairs]
    assert 0.0 <= macro_f1(gold, pred) <= 1.0
    assert 0.0 <= macro_recall(gold, pred) <= 1.0
    assert abs(accuracy(gold, pred) - sum(g == p for g, p in pairs) / len(pairs)) < 1e-12


def test_seed_statistics():
    s = seed_statistics([0.7] * 5)
    assert s["std"] == 0.0 and s["mean"] == 0.7
    assert abs(seed_statistics([0.6, 0.8])["mean"] - 0.7) < 1e-12


def test_evaluate_predictions_headline():
    rep = evaluate_predictions("classification", ["macro_f1", "accuracy"], [0, 1, 1], [0, 1, 0])
    assert set(rep.values) >= {"macro_f1", "accuracy"}
    assert abs(rep.score - (rep.values["macro_f1"] + rep.values["accuracy"]) / 2) < 1e-12
