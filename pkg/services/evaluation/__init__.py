"""Run/qrels handling, ranking metrics, reports and significance testing."""

from services.evaluation.metrics import (
    MetricSpec,
    average_precision_at_k,
    ndcg_at_k,
    parse_metric,
    precision_at_k,
)
from services.evaluation.report import EvalReport, evaluate_run, render_table
from services.evaluation.significance import (
    BaselineComparison,
    ComparisonReport,
    TTestResult,
    bonferroni,
    compare_runs,
    paired_t_test,
    regularized_incomplete_beta,
    student_t_two_sided_p,
)
from services.evaluation.trec_io import (
    Qrels,
    Run,
    rank_pairs,
    read_qrels,
    read_run,
    split_queries,
    write_qrels,
    write_run,
)

__all__ = [
    'MetricSpec', 'average_precision_at_k', 'ndcg_at_k', 'parse_metric', 'precision_at_k',
    'EvalReport', 'evaluate_run', 'render_table',
    'BaselineComparison', 'ComparisonReport', 'TTestResult', 'bonferroni', 'compare_runs',
    'paired_t_test', 'regularized_incomplete_beta', 'student_t_two_sided_p',
    'Qrels', 'Run', 'rank_pairs', 'read_qrels', 'read_run', 'split_queries', 'write_qrels', 'write_run',
]
