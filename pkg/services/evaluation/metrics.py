"""
Ranking metrics following trec_eval conventions.

Rankings are sequences of doc_ids already in canonical order; grades map
doc_id to an integer relevance grade (missing means 0).
"""

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from services.lib.constants import Gain
from services.lib.exceptions import UsageError

_METRIC_PATTERN = re.compile(r"^\s*(p|ndcg|map)@(\d+)\s*$", re.IGNORECASE)
_CANONICAL = {"p": "P", "ndcg": "NDCG", "map": "MAP"}


@dataclass(frozen=True)
class MetricSpec:
    """Parsed metric name such as ``NDCG@10``."""
    kind: str
    k: int

    @property
    def name(self) -> str:
        return f"{self.kind}@{self.k}"

    def compute(self, ranking: Sequence[str], grades: Mapping[str, int],
                gain: Gain = Gain.LINEAR) -> float:
        if self.kind == "P":
            return precision_at_k(ranking, grades, self.k)
        if self.kind == "NDCG":
            return ndcg_at_k(ranking, grades, self.k, gain=gain)
        return average_precision_at_k(ranking, grades, self.k)


def parse_metric(name: str) -> MetricSpec:
    """``P@k``, ``NDCG@k`` or ``MAP@k`` (case-insensitive)."""
    match = _METRIC_PATTERN.match(name or "")
    if not match:
        raise UsageError(f"Unknown metric {name!r}; expected P@k, NDCG@k or MAP@k")
    k = int(match.group(2))
    if k < 1:
        raise UsageError(f"Metric cutoff must be >= 1, got {name!r}")
    return MetricSpec(kind=_CANONICAL[match.group(1).lower()], k=k)


def _check_k(k: int) -> None:
    if k < 1:
        raise UsageError(f"Cutoff k must be >= 1, got {k}")


def precision_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    _check_k(k)
    hits = sum(1 for doc_id in ranking[:k] if grades.get(doc_id, 0) > 0)
    return hits / k


def _gain(grade: int, gain: Gain) -> float:
    if gain is Gain.EXPONENTIAL:
        return 2.0 ** grade - 1.0
    return float(grade)


def _dcg(grades_in_order: Sequence[int], gain: Gain) -> float:
    return sum(_gain(g, gain) / math.log2(i + 2) for i, g in enumerate(grades_in_order) if g > 0)


def ndcg_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int,
              gain: Gain = Gain.LINEAR) -> float:
    """DCG@k / IDCG@k with log2(i+1) discount; 0 when nothing is relevant."""
    _check_k(k)
    gain = Gain(gain)
    ideal = sorted((g for g in grades.values() if g > 0), reverse=True)[:k]
    idcg = _dcg(ideal, gain)
    if idcg == 0.0:
        return 0.0
    return _dcg([grades.get(doc_id, 0) for doc_id in ranking[:k]], gain) / idcg


def average_precision_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int = 100) -> float:
    """AP over the top k with the total relevant count R as denominator."""
    _check_k(k)
    total_relevant = sum(1 for g in grades.values() if g > 0)
    if total_relevant == 0:
        return 0.0
    hits = 0
    precision_sum = 0.0
    for rank, doc_id in enumerate(ranking[:k], start=1):
        if grades.get(doc_id, 0) > 0:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / total_relevant
