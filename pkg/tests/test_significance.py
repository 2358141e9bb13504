"""Tests for the paired t-test, incomplete beta and Bonferroni correction."""

import math

import numpy as np
import pytest

from services.evaluation import (
    EvalReport,
    bonferroni,
    compare_runs,
    paired_t_test,
    regularized_incomplete_beta,
    student_t_two_sided_p,
)
from services.lib.exceptions import StatisticsError


def series_incomplete_beta(x, a, b):
    """Positive-term hypergeometric series, reflected so that x <= 0.5."""
    if x > 0.5:
        return 1.0 - series_incomplete_beta(1.0 - x, b, a)
    log_front = (a * math.log(x) + b * math.log1p(-x) - math.log(a)
                 - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))
    term, total, n = 1.0, 1.0, 0
    while True:
        term *= (a + b + n) / (a + 1 + n) * x
        total += term
        n += 1
        if term < total * 1e-17 and n > a + b:
            break
    return math.exp(log_front) * total


def report(values, metric="NDCG@10"):
    return EvalReport(per_query={q: {metric: v} for q, v in values.items()},
                      aggregate={metric: sum(values.values()) / len(values)},
                      evaluated_query_count=len(values), metrics=[metric])


def test_t_test_worked_example():
    result = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert result.mean_difference == 3.0
    assert result.t == pytest.approx(4.242641, abs=1e-6)
    assert result.df == 4
    assert result.p_value == pytest.approx(0.0132356, abs=1e-6)


def test_identical_samples():
    result = paired_t_test([0.3, 0.5, 0.9], [0.3, 0.5, 0.9])
    assert result.t == 0.0
    assert result.p_value == 1.0


def test_constant_nonzero_difference():
    result = paired_t_test([1.0, 2.0, 3.0], [0.5, 1.5, 2.5])
    assert math.isinf(result.t)
    assert result.p_value == 0.0


def test_swapping_samples_negates_t():
    rng = np.random.default_rng(0)
    a, b = rng.random(12), rng.random(12)
    forward, backward = paired_t_test(a, b), paired_t_test(b, a)
    assert backward.t == pytest.approx(-forward.t)
    assert backward.p_value == pytest.approx(forward.p_value)


def test_t_test_input_errors():
    with pytest.raises(StatisticsError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(StatisticsError):
        paired_t_test([1.0, 2.0], [2.0])


@pytest.mark.parametrize("df", [1, 2, 3, 5, 10, 30, 100, 200])
@pytest.mark.parametrize("t", [0.05, 0.5, 1.0, 2.0, 3.5, 8.0, 20.0, 50.0])
def test_incomplete_beta_matches_series(df, t):
    x = df / (df + t * t)
    expected = series_incomplete_beta(x, df / 2.0, 0.5)
    assert abs(regularized_incomplete_beta(x, df / 2.0, 0.5) - expected) < 1e-10


def test_incomplete_beta_edges():
    assert regularized_incomplete_beta(0.0, 2.0, 3.0) == 0.0
    assert regularized_incomplete_beta(1.0, 2.0, 3.0) == 1.0
    # I_x(1, 1) = x
    assert regularized_incomplete_beta(0.3, 1.0, 1.0) == pytest.approx(0.3, abs=1e-14)
    with pytest.raises(StatisticsError):
        regularized_incomplete_beta(1.5, 1.0, 1.0)
    with pytest.raises(StatisticsError):
        regularized_incomplete_beta(0.5, 0.0, 1.0)


def test_p_value_decreases_with_abs_t():
    for df in (1, 4, 20, 150):
        values = [student_t_two_sided_p(t, df) for t in np.linspace(0.0, 30.0, 61)]
        assert values[0] == pytest.approx(1.0)
        assert all(later <= earlier for earlier, later in zip(values, values[1:]))
        assert student_t_two_sided_p(-2.0, df) == student_t_two_sided_p(2.0, df)


def test_p_value_against_scipy():
    stats = pytest.importorskip("scipy.stats")
    for df in (1, 3, 9, 49, 199):
        for t in (0.2, 1.7, 4.0, 12.0):
            assert student_t_two_sided_p(t, df) == pytest.approx(2 * stats.t.sf(t, df), abs=1e-10)


def test_t_test_against_scipy():
    stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = rng.random(15), rng.random(15)
        ours = paired_t_test(a, b)
        reference = stats.ttest_rel(a, b)
        assert ours.t == pytest.approx(reference.statistic, rel=1e-9)
        assert ours.p_value == pytest.approx(reference.pvalue, abs=1e-9)


def test_bonferroni_examples():
    assert bonferroni([0.003]) == [(0.003, True)]
    adjusted, significant = bonferroni([0.01, 0.2, 0.3, 0.4])[0]
    assert adjusted == pytest.approx(0.04)
    assert not significant
    assert bonferroni([0.5] * 10)[0] == (1.0, False)
    with pytest.raises(StatisticsError):
        bonferroni([1.2])
    with pytest.raises(StatisticsError):
        bonferroni([])


def test_compare_runs_against_baselines():
    queries = [f"q{i}" for i in range(8)]
    experimental = report({q: 0.8 + 0.01 * i for i, q in enumerate(queries)})
    strong = report({q: 0.5 + 0.011 * i for i, q in enumerate(queries)})
    weak = report({q: 0.2 + 0.013 * (i % 3) for i, q in enumerate(queries)})
    result = compare_runs("merged", experimental, {"weak": weak, "strong": strong}, "ndcg@10")

    assert result.best_baseline == "strong"
    assert result.metric == "NDCG@10"
    comparison = result.comparisons["strong"]
    raw = paired_t_test([0.8 + 0.01 * i for i in range(8)], [0.5 + 0.011 * i for i in range(8)]).p_value
    assert comparison.p_adjusted == pytest.approx(min(1.0, 2 * raw))
    assert comparison.relative_improvement_pct == pytest.approx(
        100 * (comparison.experimental_mean - comparison.baseline_mean) / comparison.baseline_mean)
    assert result.significant_vs_best
    assert result.to_dict()["significant_vs_best"] is True


def test_compare_runs_requires_same_queries():
    with pytest.raises(StatisticsError):
        compare_runs("x", report({"q1": 0.1, "q2": 0.2}), {"b": report({"q1": 0.1, "q3": 0.2})}, "NDCG@10")
    with pytest.raises(StatisticsError):
        compare_runs("x", report({"q1": 0.1, "q2": 0.2}), {}, "NDCG@10")


def test_comparison_dict_is_json_safe():
    result = compare_runs("x", report({"q1": 0.75, "q2": 0.5}), {"b": report({"q1": 0.5, "q2": 0.25})}, "NDCG@10")
    data = result.to_dict()["comparisons"]["b"]
    assert data["t"] == "inf"
    assert data["p_value"] == 0.0
