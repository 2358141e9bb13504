"""
Per-query and aggregate evaluation reports.
"""

import io
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Union

from rich import box
from rich.console import Console
from rich.table import Table

from services.evaluation.metrics import MetricSpec, parse_metric
from services.evaluation.trec_io import Qrels, Run
from services.lib.constants import Gain
from services.lib.exceptions import EmptyEvaluationError
from services.lib.logger import get_logger

logger = get_logger("evaluation.report")


@dataclass
class EvalReport:
    """Metric values per evaluated query plus their means."""
    per_query: Dict[str, Dict[str, float]] = field(default_factory=dict)
    aggregate: Dict[str, float] = field(default_factory=dict)
    evaluated_query_count: int = 0
    metrics: List[str] = field(default_factory=list)
    run_tag: str = ""

    def values(self, metric: str) -> Dict[str, float]:
        """Per-query values of one metric."""
        name = parse_metric(metric).name
        return {qid: scores[name] for qid, scores in self.per_query.items()}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_tag": self.run_tag,
            "metrics": list(self.metrics),
            "evaluated_query_count": self.evaluated_query_count,
            "aggregate": dict(self.aggregate),
            "per_query": {qid: dict(v) for qid, v in self.per_query.items()},
        }


def _specs(metrics: Iterable[Union[str, MetricSpec]]) -> List[MetricSpec]:
    specs: List[MetricSpec] = []
    for metric in metrics:
        spec = metric if isinstance(metric, MetricSpec) else parse_metric(metric)
        if spec not in specs:
            specs.append(spec)
    return specs


def evaluate_run(run: Run, qrels: Qrels, metrics: Sequence[Union[str, MetricSpec]],
                 gain: Union[Gain, str] = Gain.LINEAR) -> EvalReport:
    """Score every judged query; judged queries absent from the run score 0."""
    gain = Gain(gain)
    specs = _specs(metrics)
    judged = qrels.judged_queries()
    if not any(qid in run for qid in judged):
        raise EmptyEvaluationError(
            f"Run {run.tag!r} shares no query with relevant judgments in the qrels"
        )

    missing = [qid for qid in judged if qid not in run]
    if missing:
        logger.warning(f"{len(missing)} judged queries missing from run; scored as 0", run=run.tag)

    per_query: Dict[str, Dict[str, float]] = {}
    for qid in judged:
        ranking = run.doc_ids(qid)
        grades = qrels.grades(qid)
        per_query[qid] = {spec.name: spec.compute(ranking, grades, gain) for spec in specs}

    aggregate = {
        spec.name: math.fsum(values[spec.name] for values in per_query.values()) / len(per_query)
        for spec in specs
    }
    return EvalReport(
        per_query=per_query,
        aggregate=aggregate,
        evaluated_query_count=len(per_query),
        metrics=[spec.name for spec in specs],
        run_tag=run.tag,
    )


def render_table(reports: Mapping[str, EvalReport], metrics: Optional[Sequence[str]] = None,
                 marks: Optional[Mapping[str, Set[str]]] = None, title: Optional[str] = None) -> str:
    """Aligned plain-text table of aggregates; ``marks`` maps row -> metrics to star."""
    if metrics is None:
        metrics = next(iter(reports.values())).metrics if reports else []
    names = [parse_metric(m).name for m in metrics]
    marks = marks or {}

    table = Table(title=title, box=box.ASCII, show_edge=True, pad_edge=True)
    table.add_column("variant", justify="left")
    for name in names:
        table.add_column(name, justify="right")

    for variant, report in reports.items():
        starred = marks.get(variant, set())
        cells = []
        for name in names:
            value = report.aggregate.get(name)
            cell = "-" if value is None else f"{value:.4f}"
            if name in starred:
                cell += "*"
            cells.append(cell)
        table.add_row(variant, *cells)

    buffer = io.StringIO()
    console = Console(file=buffer, width=200, color_system=None, force_terminal=False,
                      legacy_windows=False)
    console.print(table)
    return "\n".join(line.rstrip() for line in buffer.getvalue().splitlines()) + "\n"
