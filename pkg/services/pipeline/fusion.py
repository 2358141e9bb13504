"""
Weighted fusion of first-stage and re-ranker scores, and grid tuning of
the two weights.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

from services.evaluation.metrics import parse_metric
from services.evaluation.report import evaluate_run
from services.evaluation.trec_io import Qrels, Run
from services.lib.constants import (
    DEFAULT_GRID_STEP,
    DEFAULT_LAMBDA_BM25,
    DEFAULT_LAMBDA_LLM,
    Gain,
    Normalization,
)
from services.lib.exceptions import CandidateMismatchError, EmptyGridError, InvalidFusionWeightsError
from services.lib.logger import get_logger

logger = get_logger("pipeline.fusion")


@dataclass(frozen=True)
class FusionWeights:
    lambda_bm25: float = DEFAULT_LAMBDA_BM25
    lambda_llm: float = DEFAULT_LAMBDA_LLM

    def __post_init__(self) -> None:
        for name in ("lambda_bm25", "lambda_llm"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise InvalidFusionWeightsError(f"{name} must lie in [0, 1], got {value!r}")
            object.__setattr__(self, name, value)

    def to_dict(self) -> Dict[str, float]:
        return {"lambda_bm25": self.lambda_bm25, "lambda_llm": self.lambda_llm}


def minmax(scores: Dict[str, float]) -> Dict[str, float]:
    """Scale to [0, 1]; a constant list maps to all 1.0."""
    if not scores:
        return {}
    low, high = min(scores.values()), max(scores.values())
    if high == low:
        return {doc_id: 1.0 for doc_id in scores}
    span = high - low
    return {doc_id: (s - low) / span for doc_id, s in scores.items()}


def fuse_runs(bm25_run: Run, llm_run: Run, weights: FusionWeights,
              normalization: Union[Normalization, str] = Normalization.MINMAX_PER_QUERY) -> Run:
    """lambda_bm25 * s_bm25 + lambda_llm * s_llm per candidate."""
    normalization = Normalization(normalization)
    extra = sorted(set(llm_run.query_ids()) - set(bm25_run.query_ids()))
    if extra:
        raise CandidateMismatchError(f"Re-ranked run holds queries absent from the first stage: {', '.join(extra[:5])}")

    rankings: Dict[str, List[Tuple[str, float]]] = {}
    for qid in bm25_run.query_ids():
        first = bm25_run.scores(qid)
        second = llm_run.scores(qid)
        if set(first) != set(second):
            raise CandidateMismatchError(
                f"Query {qid!r}: re-ranked candidates differ from the first stage "
                f"({len(first)} vs {len(second)} documents)"
            )
        if normalization is Normalization.MINMAX_PER_QUERY:
            first, second = minmax(first), minmax(second)
        rankings[qid] = [(doc_id, weights.lambda_bm25 * first[doc_id] + weights.lambda_llm * second[doc_id])
                         for doc_id in first]

    tag = f"fused_bm25={weights.lambda_bm25!r}_llm={weights.lambda_llm!r}_{normalization.value}"
    return Run(rankings, tag=tag)


def weight_grid(step: float = DEFAULT_GRID_STEP) -> List[float]:
    """{0, step, 2*step, ...} up to 1, rounded to 10 decimals."""
    if not (math.isfinite(step) and 0.0 < step <= 1.0):
        raise EmptyGridError(f"Grid step must lie in (0, 1], got {step!r}")
    count = int(math.floor(1.0 / step + 1e-9))
    return [round(i * step, 10) for i in range(count + 1)]


def _search_grid(objective: Callable[[FusionWeights], float], step: float) -> Tuple[FusionWeights, float]:
    # lambda_llm outer, lambda_bm25 inner; only strict improvements replace the best,
    # so ties go to the smallest lambda_llm, then the smallest lambda_bm25
    grid = weight_grid(step)
    best, best_value = None, -math.inf
    for lambda_llm in grid:
        for lambda_bm25 in grid:
            if lambda_llm == 0.0 and lambda_bm25 == 0.0:
                continue
            weights = FusionWeights(lambda_bm25=lambda_bm25, lambda_llm=lambda_llm)
            value = objective(weights)
            if value > best_value:
                best, best_value = weights, value
    if best is None:
        raise EmptyGridError("Fusion grid holds no usable weight pair")
    return best, best_value


def tune_fusion_shared(cases: Sequence[Tuple[Run, Run, Qrels]], metric: str,
                       grid_step: float = DEFAULT_GRID_STEP,
                       normalization: Union[Normalization, str] = Normalization.MINMAX_PER_QUERY,
                       gain: Union[Gain, str] = Gain.LINEAR) -> FusionWeights:
    """One weight pair maximizing the mean objective over several (bm25, llm, qrels) cases."""
    if not cases:
        raise EmptyGridError("No development sets to tune fusion weights on")
    name = parse_metric(metric).name

    def objective(weights: FusionWeights) -> float:
        values = [evaluate_run(fuse_runs(bm25, llm, weights, normalization), qrels, [name], gain).aggregate[name]
                  for bm25, llm, qrels in cases]
        return math.fsum(values) / len(values)

    best, value = _search_grid(objective, grid_step)
    logger.info("Tuned fusion weights", metric=name, lambda_bm25=best.lambda_bm25,
                lambda_llm=best.lambda_llm, objective=round(value, 6), dev_sets=len(cases))
    return best


def tune_fusion(bm25_run: Run, llm_run: Run, qrels: Qrels, metric: str,
                grid_step: float = DEFAULT_GRID_STEP,
                normalization: Union[Normalization, str] = Normalization.MINMAX_PER_QUERY,
                gain: Union[Gain, str] = Gain.LINEAR) -> FusionWeights:
    """Grid search of (lambda_bm25, lambda_llm) on one development set."""
    return tune_fusion_shared([(bm25_run, llm_run, qrels)], metric, grid_step, normalization, gain)
