"""
Paired two-sided Student t-test with Bonferroni correction.

The Student-t tail comes from the regularized incomplete beta function,
evaluated as a continued fraction with the modified Lentz method.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from services.evaluation.metrics import parse_metric
from services.evaluation.report import EvalReport
from services.lib.constants import DEFAULT_FAMILY_ALPHA
from services.lib.exceptions import StatisticsError
from services.lib.logger import get_logger

logger = get_logger("evaluation.significance")

LENTZ_TOLERANCE = 1e-12
LENTZ_TINY = 1e-300
LENTZ_MAX_ITERATIONS = 10000


def _beta_continued_fraction(x: float, a: float, b: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < LENTZ_TINY:
        d = LENTZ_TINY
    d = 1.0 / d
    h = d
    for m in range(1, LENTZ_MAX_ITERATIONS + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < LENTZ_TINY:
            d = LENTZ_TINY
        c = 1.0 + aa / c
        if abs(c) < LENTZ_TINY:
            c = LENTZ_TINY
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < LENTZ_TINY:
            d = LENTZ_TINY
        c = 1.0 + aa / c
        if abs(c) < LENTZ_TINY:
            c = LENTZ_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < LENTZ_TOLERANCE:
            return h
    raise StatisticsError(f"Incomplete beta did not converge for x={x}, a={a}, b={b}")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise StatisticsError(f"Beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise StatisticsError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x

    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the continued fraction converges fast only below the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(x, a, b) / a
    return 1.0 - front * _beta_continued_fraction(1.0 - x, b, a) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise StatisticsError(f"Degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    p = regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
    return min(1.0, max(0.0, p))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p_value: float
    mean_difference: float
    n: int


def paired_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on a_i - b_i with the n-1 sample deviation."""
    if len(sample_a) != len(sample_b):
        raise StatisticsError(f"Samples differ in length: {len(sample_a)} vs {len(sample_b)}")
    n = len(sample_a)
    if n < 2:
        raise StatisticsError(f"Paired t-test needs at least 2 pairs, got {n}")

    diffs = np.asarray(sample_a, dtype=np.float64) - np.asarray(sample_b, dtype=np.float64)
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    df = n - 1

    if sd == 0.0:
        return TTestResult(t=0.0 if mean == 0.0 else math.copysign(math.inf, mean), df=df,
                           p_value=1.0 if mean == 0.0 else 0.0, mean_difference=mean, n=n)

    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, df=df, p_value=student_t_two_sided_p(t, df), mean_difference=mean, n=n)


def bonferroni(p_values: Sequence[float], alpha_family: float = DEFAULT_FAMILY_ALPHA) -> List[Tuple[float, bool]]:
    """(min(1, m*p), adjusted < alpha_family) for each p-value."""
    if not p_values:
        raise StatisticsError("Bonferroni correction needs at least one p-value")
    m = len(p_values)
    adjusted = []
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise StatisticsError(f"p-value outside [0, 1]: {p}")
        p_adjusted = min(1.0, m * p)
        adjusted.append((p_adjusted, p_adjusted < alpha_family))
    return adjusted


@dataclass
class BaselineComparison:
    baseline: str
    metric: str
    experimental_mean: float
    baseline_mean: float
    relative_improvement_pct: Optional[float]
    t: float
    df: int
    p_value: float
    p_adjusted: float
    significant: bool


@dataclass
class ComparisonReport:
    experimental: str
    metric: str
    family_alpha: float
    best_baseline: str
    comparisons: Dict[str, BaselineComparison] = field(default_factory=dict)

    @property
    def significant_vs_best(self) -> bool:
        return self.comparisons[self.best_baseline].significant

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experimental": self.experimental,
            "metric": self.metric,
            "family_alpha": self.family_alpha,
            "best_baseline": self.best_baseline,
            "significant_vs_best": self.significant_vs_best,
            "comparisons": {name: _finite_dict(asdict(c)) for name, c in self.comparisons.items()},
        }


def _finite_dict(data: Dict[str, Any]) -> Dict[str, Any]:
    # JSON has no infinity; a zero-variance difference is reported as a string
    return {k: (repr(v) if isinstance(v, float) and math.isinf(v) else v) for k, v in data.items()}


def compare_runs(experimental_name: str, experimental: EvalReport,
                 baselines: Mapping[str, EvalReport], metric: str,
                 family_alpha: float = DEFAULT_FAMILY_ALPHA) -> ComparisonReport:
    """Test one run against each baseline; Bonferroni m = number of baselines."""
    if not baselines:
        raise StatisticsError("compare_runs needs at least one baseline")

    exp_values = experimental.values(metric)
    metric_name = parse_metric(metric).name
    tests: Dict[str, Tuple[TTestResult, float]] = {}
    for name, report in baselines.items():
        base_values = report.values(metric)
        shared = sorted(set(exp_values) & set(base_values))
        if len(shared) != len(exp_values) or len(shared) != len(base_values):
            raise StatisticsError(f"Runs {experimental_name!r} and {name!r} were evaluated on different queries")
        result = paired_t_test([exp_values[q] for q in shared], [base_values[q] for q in shared])
        tests[name] = (result, math.fsum(base_values.values()) / len(base_values))

    corrected = bonferroni([result.p_value for result, _ in tests.values()], family_alpha)
    exp_mean = math.fsum(exp_values.values()) / len(exp_values)

    comparisons: Dict[str, BaselineComparison] = {}
    for (name, (result, base_mean)), (p_adjusted, significant) in zip(tests.items(), corrected):
        comparisons[name] = BaselineComparison(
            baseline=name,
            metric=metric_name,
            experimental_mean=exp_mean,
            baseline_mean=base_mean,
            relative_improvement_pct=(100.0 * (exp_mean - base_mean) / base_mean) if base_mean else None,
            t=result.t,
            df=result.df,
            p_value=result.p_value,
            p_adjusted=p_adjusted,
            significant=significant,
        )

    # highest mean wins; first listed baseline on ties
    best = max(comparisons, key=lambda n: (comparisons[n].baseline_mean, -list(comparisons).index(n)))
    logger.info("Significance tests complete", experimental=experimental_name, metric=metric_name,
                best_baseline=best, significant=comparisons[best].significant)
    return ComparisonReport(experimental=experimental_name, metric=metric_name,
                            family_alpha=family_alpha, best_baseline=best, comparisons=comparisons)
