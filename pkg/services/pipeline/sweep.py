"""
Scaling-factor sweep over development sets.

For each alpha: build theta' = theta_T + alpha * tau (or read a supplied
score table), re-rank the first-stage candidates of every dev set, fuse,
evaluate the objective and average over dev sets. The selected alpha is
the argmax, ties going to the smallest alpha.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

from services.evaluation.report import evaluate_run
from services.evaluation.trec_io import Qrels, Run, read_qrels, read_run
from services.lib.common import format_alpha, pipeline_stage
from services.lib.constants import Role
from services.lib.exceptions import EmptyEvaluationError, MissingInputError
from services.lib.logger import get_logger
from services.pipeline.experiment_config import DevSet, ExperimentConfig
from services.pipeline.fusion import FusionWeights, fuse_runs
from services.reranker.bi_encoder import ToyBiEncoder, read_vocab, vocab_path_for
from services.reranker.scorers import BiEncoderScorer, Scorer, read_scores, rerank
from services.retrieval.bm25_index import build_index, search_many
from services.retrieval.corpus import Document, corpus_map, read_corpus, read_queries
from services.task_arith.arithmetic import MergeSpec, apply_task_vector, diff_checkpoints
from services.tensor_store import Checkpoint, TaskVector, read_checkpoint

logger = get_logger("pipeline.sweep")


@dataclass
class DevData:
    """Loaded development set with its first-stage candidates."""
    name: str
    queries: Dict[str, str]
    qrels: Qrels
    corpus: Dict[str, Document]
    first_stage: Run


def first_stage_run(config: ExperimentConfig, corpus: Sequence[Document], queries: Mapping[str, str],
                    run_path: Optional[Path] = None, workers: int = 1) -> Run:
    """Read a supplied first-stage run, or retrieve with BM25 at the configured depth."""
    if run_path is not None:
        return read_run(run_path).truncate(config.first_stage_depth)
    index = build_index(corpus, k1=config.bm25.k1, b=config.bm25.b, ascii_fold=config.bm25.ascii_fold)
    return search_many(index, queries, config.first_stage_depth, workers=workers, tag="bm25")


def load_dev_set(config: ExperimentConfig, dev: DevSet, workers: int = 1) -> DevData:
    documents = read_corpus(dev.corpus)
    queries = read_queries(dev.queries)
    qrels = read_qrels(dev.qrels)
    if not qrels.judged_queries():
        raise EmptyEvaluationError(f"Dev set {dev.name!r} has no relevant judgments")
    run = first_stage_run(config, documents, queries, dev.first_stage_run, workers)
    return DevData(name=dev.name, queries=queries, qrels=qrels, corpus=corpus_map(documents), first_stage=run)


class CheckpointSource:
    """Lazy access to the (pretrained, domain, ir) triple, the task vector and merges."""

    def __init__(self, config: ExperimentConfig, workers: int = 1):
        self.config = config
        self.workers = workers
        self._checkpoints: Dict[str, Checkpoint] = {}
        self._task_vector: Optional[TaskVector] = None
        self._vocab: Optional[List[str]] = None

    def has(self, role: Role) -> bool:
        return getattr(self.config.checkpoints, role.value) is not None

    def can_merge(self) -> bool:
        return all(self.has(role) for role in (Role.PRETRAINED, Role.DOMAIN, Role.IR))

    def checkpoint(self, role: Role) -> Checkpoint:
        if role.value not in self._checkpoints:
            path = getattr(self.config.checkpoints, role.value)
            if path is None:
                raise MissingInputError(f"No {role.value} checkpoint configured")
            self._checkpoints[role.value] = read_checkpoint(path)
        return self._checkpoints[role.value]

    def vocab(self) -> List[str]:
        if self._vocab is None:
            path = self.config.checkpoints.vocab
            if path is None:
                anchor = next((getattr(self.config.checkpoints, r.value) for r in Role
                               if r in (Role.IR, Role.PRETRAINED, Role.DOMAIN) and self.has(r)), None)
                if anchor is None:
                    raise MissingInputError("No checkpoint or vocabulary configured")
                path = vocab_path_for(anchor)
            self._vocab = read_vocab(path)
        return self._vocab

    def task_vector(self) -> TaskVector:
        if self._task_vector is None:
            with pipeline_stage("task-vector"):
                self._task_vector = diff_checkpoints(self.checkpoint(Role.DOMAIN), self.checkpoint(Role.PRETRAINED),
                                                     self.config.mismatch_policy, workers=self.workers)
        return self._task_vector

    def merged(self, alpha: float) -> Checkpoint:
        with pipeline_stage("merge"):
            spec = MergeSpec(alpha=alpha, mismatch_policy=self.config.mismatch_policy)
            return apply_task_vector(self.checkpoint(Role.IR), self.task_vector(), spec, workers=self.workers)

    def encoder(self, ckpt: Checkpoint) -> ToyBiEncoder:
        return ToyBiEncoder.from_checkpoint(ckpt, self.vocab(), ascii_fold=self.config.bm25.ascii_fold)


@dataclass
class SweepResult:
    alpha_star: float
    objective_metric: str
    table: Dict[str, float] = field(default_factory=dict)
    per_dev_set: Dict[str, Dict[str, float]] = field(default_factory=dict)
    evaluated_alphas: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha_star": self.alpha_star,
            "objective_metric": self.objective_metric,
            "table": dict(self.table),
            "per_dev_set": {a: dict(v) for a, v in self.per_dev_set.items()},
            "evaluated_alphas": list(self.evaluated_alphas),
        }


def _dev_scorer(config: ExperimentConfig, source: CheckpointSource, alpha: float, dev: DevData,
                encoders: Dict[str, ToyBiEncoder]) -> Scorer:
    table = config.sweep.table_for(alpha, dev.name)
    if table is not None:
        return read_scores(table)
    if not source.can_merge():
        raise MissingInputError(
            f"No score table for alpha={format_alpha(alpha)} on dev set {dev.name!r} and no checkpoints to merge"
        )
    key = format_alpha(alpha)
    if key not in encoders:
        encoders[key] = source.encoder(source.merged(alpha))
    return BiEncoderScorer(encoders[key], dev.corpus, name=f"merged@{key}")


def sweep_alpha(config: ExperimentConfig, weights: Optional[Mapping[str, FusionWeights]] = None,
                dev_data: Optional[Sequence[DevData]] = None, source: Optional[CheckpointSource] = None,
                workers: int = 1) -> SweepResult:
    """Evaluate every alpha of the grid on the dev sets and pick the best."""
    objective = config.sweep.objective_metric
    weights = dict(weights or {})
    default_weights = FusionWeights(config.fusion.lambda_bm25, config.fusion.lambda_llm)
    source = source or CheckpointSource(config, workers)
    if dev_data is None:
        with pipeline_stage("sweep-load"):
            dev_data = [load_dev_set(config, dev, workers) for dev in config.sweep.dev_sets]
    if not dev_data:
        raise MissingInputError("The alpha sweep needs at least one dev set")

    alphas = sorted({format_alpha(a): float(a) for a in config.sweep.alphas}.values())
    table: Dict[str, float] = {}
    per_dev: Dict[str, Dict[str, float]] = {}
    encoders: Dict[str, ToyBiEncoder] = {}

    for alpha in alphas:
        key = format_alpha(alpha)
        values: Dict[str, float] = {}
        with pipeline_stage(f"sweep alpha={key}"):
            for dev in dev_data:
                scorer = _dev_scorer(config, source, alpha, dev, encoders)
                llm_run = rerank(scorer, dev.first_stage, dev.queries, workers=workers)
                fused = fuse_runs(dev.first_stage, llm_run, weights.get(dev.name, default_weights),
                                  config.fusion.normalization)
                values[dev.name] = evaluate_run(fused, dev.qrels, [objective], config.gain).aggregate[objective]
        per_dev[key] = values
        table[key] = math.fsum(values.values()) / len(values)
        logger.info("Evaluated alpha", alpha=key, objective=objective, mean=round(table[key], 6))

    # ascending scan with strict improvement keeps the smallest alpha on ties
    alpha_star = alphas[0]
    for alpha in alphas[1:]:
        if table[format_alpha(alpha)] > table[format_alpha(alpha_star)]:
            alpha_star = alpha
    logger.info("Selected scaling factor", alpha_star=format_alpha(alpha_star), objective=objective)
    return SweepResult(alpha_star=alpha_star, objective_metric=objective, table=table,
                       per_dev_set=per_dev, evaluated_alphas=alphas)
