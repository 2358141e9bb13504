"""
End-to-end experiment: task vector generation, integration and zero-shot
evaluation.

Stages run in order: first-stage retrieval, development sets, fusion
tuning, alpha sweep, merge, re-ranking of every variant, fusion,
evaluation and significance tests. Every artifact lands in the output
directory together with a reproducibility manifest.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Set, Tuple

from services import __version__
from services.evaluation.report import EvalReport, evaluate_run, render_table
from services.evaluation.significance import ComparisonReport, compare_runs
from services.evaluation.trec_io import read_qrels, write_run
from services.lib.common import canonical_json, format_alpha, pipeline_stage, sha256_bytes, sha256_file
from services.lib.constants import CHECKPOINT_SUFFIX, VOCAB_SIDECAR, FusionSharing, Role
from services.lib.exceptions import EmptyEvaluationError, MissingInputError
from services.lib.logger import PerformanceLogger, get_logger
from services.pipeline.experiment_config import ExperimentConfig
from services.pipeline.fusion import FusionWeights, fuse_runs, tune_fusion, tune_fusion_shared
from services.pipeline.sweep import CheckpointSource, DevData, SweepResult, first_stage_run, load_dev_set, sweep_alpha
from services.reranker.bi_encoder import write_vocab
from services.reranker.scorers import BiEncoderScorer, Scorer, read_scores, rerank
from services.retrieval.bm25_index import build_index, save_index, search_many
from services.retrieval.corpus import Document, corpus_map, read_corpus, read_queries
from services.tensor_store import Checkpoint, write_checkpoint

logger = get_logger("pipeline.experiment")

BASELINE_VARIANTS = ("pretrained", "domain", "ir")


@dataclass
class ExperimentResult:
    alpha_star: float
    output_dir: Path
    reports: Dict[str, EvalReport] = field(default_factory=dict)
    comparisons: Dict[str, ComparisonReport] = field(default_factory=dict)
    sweep: Optional[SweepResult] = None
    fusion_weights: Dict[str, FusionWeights] = field(default_factory=dict)
    artifacts: Dict[str, Path] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha_star": self.alpha_star,
            "variants": {name: report.to_dict() for name, report in self.reports.items()},
            "significance": {name: c.to_dict() for name, c in self.comparisons.items()},
            "fusion_weights": {name: w.to_dict() for name, w in self.fusion_weights.items()},
            "sweep": self.sweep.to_dict() if self.sweep else None,
        }


def variant_names(alpha_star: float) -> List[str]:
    """bm25, the three checkpoints, the selected merge and the zero-shot merge."""
    names = ["bm25", *BASELINE_VARIANTS, f"merged@{format_alpha(alpha_star)}"]
    if format_alpha(alpha_star) != format_alpha(1.0):
        names.append(f"merged@{format_alpha(1.0)}")
    return names


def _file_stem(variant: str) -> str:
    return variant.replace("@", "-")


class _StageTimer:
    def __init__(self) -> None:
        self.perf = PerformanceLogger("pipeline.experiment")

    @contextmanager
    def __call__(self, name: str) -> Iterator[None]:
        self.perf.start_operation(name)
        with pipeline_stage(name):
            yield
        self.perf.end_operation()


def _ir_dev_scorer(config: ExperimentConfig, source: CheckpointSource, dev: DevData) -> Scorer:
    # theta_T scores drive fusion tuning; alpha=0 tables hold exactly those
    if source.has(Role.IR):
        return BiEncoderScorer(source.encoder(source.checkpoint(Role.IR)), dev.corpus, name="ir")
    table = config.sweep.table_for(0.0, dev.name)
    if table is not None:
        return read_scores(table)
    raise MissingInputError(f"Fusion tuning on {dev.name!r} needs the ir checkpoint or an alpha=0 score table")


def _tune_weights(config: ExperimentConfig, source: CheckpointSource, dev_data: List[DevData],
                  workers: int) -> Tuple[Dict[str, FusionWeights], FusionWeights]:
    """(weights per dev set, weights for the evaluation set)."""
    default = FusionWeights(config.fusion.lambda_bm25, config.fusion.lambda_llm)
    if not config.fusion.tune or not dev_data:
        return {}, default

    objective = config.sweep.objective_metric
    cases = []
    for dev in dev_data:
        llm_run = rerank(_ir_dev_scorer(config, source, dev), dev.first_stage, dev.queries, workers=workers)
        cases.append((dev.first_stage, llm_run, dev.qrels))

    if config.fusion.sharing is FusionSharing.SHARED:
        shared = tune_fusion_shared(cases, objective, config.fusion.grid_step, config.fusion.normalization,
                                    config.gain)
        return {dev.name: shared for dev in dev_data}, shared

    per_dev = {dev.name: tune_fusion(bm25, llm, qrels, objective, config.fusion.grid_step,
                                     config.fusion.normalization, config.gain)
               for dev, (bm25, llm, qrels) in zip(dev_data, cases)}
    evaluation = per_dev.get(config.evaluation.fusion_dev_set, default) if config.evaluation.fusion_dev_set else default
    return per_dev, evaluation


def _variant_scorer(config: ExperimentConfig, variant: str, checkpoints: Dict[str, Checkpoint],
                    source: CheckpointSource, corpus: Mapping[str, Document]) -> Optional[Scorer]:
    table = config.variant_score_tables.get(variant)
    if table is not None:
        return read_scores(table)
    ckpt = checkpoints.get(variant)
    if ckpt is None:
        return None
    return BiEncoderScorer(source.encoder(ckpt), corpus, name=variant)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Run the whole procedure described by ``config`` and write its artifacts."""
    stage = _StageTimer()
    out_dir = Path(config.output_dir)
    runs_dir = out_dir / "runs"
    ckpt_dir = out_dir / "checkpoints"
    runs_dir.mkdir(parents=True, exist_ok=True)
    artifacts: Dict[str, Path] = {}
    source = CheckpointSource(config, workers)

    with stage("load"):
        documents = read_corpus(config.evaluation.corpus)
        queries = read_queries(config.evaluation.queries)
        qrels = read_qrels(config.evaluation.qrels)
        if not qrels.judged_queries():
            raise EmptyEvaluationError("Evaluation qrels hold no relevant judgments")
        corpus = corpus_map(documents)

    with stage("first-stage"):
        if config.evaluation.first_stage_run is None:
            index = build_index(documents, k1=config.bm25.k1, b=config.bm25.b, ascii_fold=config.bm25.ascii_fold)
            artifacts["index"] = out_dir / "index.json"
            save_index(index, artifacts["index"])
            bm25_run = search_many(index, queries, config.first_stage_depth, workers=workers, tag="bm25")
        else:
            bm25_run = first_stage_run(config, documents, queries, config.evaluation.first_stage_run, workers)
        artifacts["runs/bm25"] = runs_dir / "bm25.trec"
        write_run(bm25_run, artifacts["runs/bm25"], tag="bm25")

    dev_data: List[DevData] = []
    if config.sweep.dev_sets and (config.sweep.enabled or config.fusion.tune):
        with stage("dev-sets"):
            dev_data = [load_dev_set(config, dev, workers) for dev in config.sweep.dev_sets]

    with stage("fusion-tuning"):
        dev_weights, eval_weights = _tune_weights(config, source, dev_data, workers)

    sweep: Optional[SweepResult] = None
    if config.sweep.enabled:
        with stage("sweep"):
            sweep = sweep_alpha(config, dev_weights, dev_data, source, workers)
            alpha_star = sweep.alpha_star
            artifacts["sweep"] = out_dir / "sweep.json"
            artifacts["sweep"].write_text(canonical_json(sweep.to_dict()), encoding="utf-8")
    else:
        alpha_star = config.alpha
    logger.info("Scaling factor", alpha=format_alpha(alpha_star), swept=sweep is not None)

    names = variant_names(alpha_star)
    checkpoints: Dict[str, Checkpoint] = {}
    with stage("merge"):
        for role in (Role.PRETRAINED, Role.DOMAIN, Role.IR):
            if source.has(role):
                checkpoints[role.value] = source.checkpoint(role)
        if source.can_merge():
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            artifacts["checkpoints/task_vector"] = ckpt_dir / f"task_vector{CHECKPOINT_SUFFIX}"
            write_checkpoint(source.task_vector(), artifacts["checkpoints/task_vector"])
            for variant in names:
                if not variant.startswith("merged@"):
                    continue
                merged = source.merged(float(variant.split("@", 1)[1]))
                checkpoints[variant] = merged
                artifacts[f"checkpoints/{variant}"] = ckpt_dir / f"{_file_stem(variant)}{CHECKPOINT_SUFFIX}"
                write_checkpoint(merged, artifacts[f"checkpoints/{variant}"])
            artifacts["checkpoints/vocab"] = ckpt_dir / VOCAB_SIDECAR
            write_vocab(source.vocab(), artifacts["checkpoints/vocab"])

    reports: Dict[str, EvalReport] = {}
    for variant in names:
        with stage(f"evaluate {variant}"):
            if variant == "bm25":
                reports[variant] = evaluate_run(bm25_run, qrels, config.metrics, config.gain)
                continue
            scorer = _variant_scorer(config, variant, checkpoints, source, corpus)
            if scorer is None:
                logger.warning("Skipping variant without checkpoint or score table", variant=variant)
                continue
            llm_run = rerank(scorer, bm25_run, queries, workers=workers, tag=variant)
            fused = fuse_runs(bm25_run, llm_run, eval_weights, config.fusion.normalization)
            stem = _file_stem(variant)
            artifacts[f"runs/{variant}.rerank"] = runs_dir / f"{stem}.rerank.trec"
            artifacts[f"runs/{variant}.fused"] = runs_dir / f"{stem}.fused.trec"
            write_run(llm_run, artifacts[f"runs/{variant}.rerank"])
            write_run(fused, artifacts[f"runs/{variant}.fused"])
            reports[variant] = evaluate_run(fused, qrels, config.metrics, config.gain)

    comparisons: Dict[str, ComparisonReport] = {}
    marks: Dict[str, Set[str]] = {}
    with stage("significance"):
        baselines = {n: r for n, r in reports.items() if not n.startswith("merged@")}
        evaluated = min((r.evaluated_query_count for r in reports.values()), default=0)
        for variant in (n for n in reports if n.startswith("merged@")):
            if not baselines or evaluated < 2:
                logger.warning("Skipping significance tests", variant=variant, queries=evaluated)
                break
            comparisons[variant] = compare_runs(variant, reports[variant], baselines, config.significance.metric,
                                                config.significance.family_alpha)
            if comparisons[variant].significant_vs_best:
                marks[variant] = {comparisons[variant].metric}

    fusion_weights = {"evaluation": eval_weights, **{f"dev:{n}": w for n, w in dev_weights.items()}}
    result = ExperimentResult(alpha_star=alpha_star, output_dir=out_dir, reports=reports, comparisons=comparisons,
                              sweep=sweep, fusion_weights=fusion_weights, artifacts=artifacts)

    with stage("report"):
        artifacts["report"] = out_dir / "report.json"
        artifacts["report"].write_text(canonical_json(result.to_dict()), encoding="utf-8")
        artifacts["report_table"] = out_dir / "report.txt"
        title = f"alpha*={format_alpha(alpha_star)}"
        artifacts["report_table"].write_text(render_table(reports, config.metrics, marks, title=title),
                                             encoding="utf-8")
        artifacts["manifest"] = out_dir / "manifest.json"
        artifacts["manifest"].write_text(canonical_json(build_manifest(config, result)), encoding="utf-8")

    logger.info("Experiment complete", output_dir=str(out_dir), variants=len(reports),
                alpha_star=format_alpha(alpha_star))
    return result


def build_manifest(config: ExperimentConfig, result: ExperimentResult) -> Dict[str, Any]:
    """Provenance: tool version, seed, config hash, input hashes and the alphas evaluated."""
    inputs = {label: {"path": config.relative(path), "sha256": sha256_file(path)}
              for label, path in config.input_paths()}
    outputs = {label: path.relative_to(result.output_dir).as_posix()
               for label, path in sorted(result.artifacts.items()) if label != "manifest"}
    return {
        "tool": "taskfuse",
        "version": __version__,
        "seed": config.seed,
        "config_sha256": sha256_bytes(config.canonical_text().encode("utf-8")),
        "inputs": inputs,
        "alpha_star": result.alpha_star,
        "evaluated_alphas": result.sweep.evaluated_alphas if result.sweep else [],
        "outputs": outputs,
    }
