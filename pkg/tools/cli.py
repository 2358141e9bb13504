#!/usr/bin/env python3
"""
taskfuse command line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error,
3 numerical/contract violation.
"""

import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import click
from rich import box
from rich.console import Console
from rich.table import Table

from services import __version__
from services.evaluation import (
    EvalReport,
    compare_runs,
    evaluate_run,
    read_qrels,
    read_run,
    render_table,
    split_queries,
    write_qrels,
    write_run,
)
from services.lib.common import canonical_json, format_alpha
from services.lib.config import AppConfig, ConfigManager, get_config
from services.lib.constants import Gain, MismatchPolicy, Normalization
from services.lib.exceptions import DataFormatError, TaskfuseError, UsageError
from services.lib.logger import configure_logging, get_logger
from services.pipeline import (
    FusionWeights,
    fuse_runs,
    load_experiment_config,
    run_experiment,
    sweep_alpha,
    tune_fusion,
)
from services.reranker import (
    BiEncoderScorer,
    generate_toy_collection,
    load_bi_encoder,
    load_fixture_config,
    read_scores,
    rerank,
    train_fixture,
    write_fixture,
    write_toy_collection,
)
from services.retrieval import build_index, corpus_map, load_index, read_corpus, read_queries, save_index, search_many
from services.task_arith import (
    MergeSpec,
    apply_task_vector,
    combine_task_vectors,
    diff_checkpoints,
    negate_task_vector,
)
from services.tensor_store import read_checkpoint, write_checkpoint

console = Console()
err_console = Console(stderr=True)
logger = get_logger("cli")

EXISTING_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)
OUT_FILE = click.Path(dir_okay=False, path_type=Path)
OUT_DIR = click.Path(file_okay=False, path_type=Path)
POLICY = click.Choice([p.value for p in MismatchPolicy])
NORMALIZATION = click.Choice([n.value for n in Normalization])
GAIN = click.Choice([g.value for g in Gain])


def _settings(ctx: click.Context) -> AppConfig:
    return ctx.find_root().obj["settings"]


def _workers(ctx: click.Context, workers: Optional[int]) -> int:
    return workers if workers is not None else _settings(ctx).runtime.workers


def _metric_list(raw: Optional[str], ctx: click.Context) -> List[str]:
    if raw is None:
        return list(_settings(ctx).evaluation.metrics)
    metrics = [m.strip() for m in raw.split(",") if m.strip()]
    if not metrics:
        raise UsageError("--metrics must name at least one metric")
    return metrics


def _workers_option(fn):
    return click.option("--workers", type=click.IntRange(min=1), default=None,
                        help="Worker threads (default from tool config)")(fn)


@click.group()
@click.version_option(__version__, prog_name="taskfuse")
@click.option("--config-file", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Tool defaults YAML (default: config/taskfuse.yaml)")
@click.option("--log-level", default=None, help="Override the configured log level")
@click.pass_context
def cli(ctx: click.Context, config_file: Optional[Path], log_level: Optional[str]):
    """Task arithmetic for zero-shot retrieval: merge, retrieve, re-rank, fuse, evaluate."""
    settings = ConfigManager().load_config(config_file) if config_file else get_config()
    configure_logging(level=(log_level or settings.logging.level).upper(), log_dir=settings.logging.log_dir,
                      structured=settings.logging.structured)
    ctx.obj = {"settings": settings}


# ---------------------------------------------------------------------------
# task vectors


@cli.group()
def tv():
    """Task vector extraction, merging and arithmetic."""


@tv.command("diff")
@click.option("--domain", "domain_path", type=EXISTING_FILE, required=True, help="Domain fine-tuned checkpoint")
@click.option("--pretrained", "pretrained_path", type=EXISTING_FILE, required=True, help="Pre-trained checkpoint")
@click.option("--out", type=OUT_FILE, required=True)
@click.option("--policy", type=POLICY, default=MismatchPolicy.STRICT.value, show_default=True)
@_workers_option
@click.pass_context
def tv_diff(ctx, domain_path, pretrained_path, out, policy, workers):
    """tau = domain - pretrained."""
    tau = diff_checkpoints(read_checkpoint(domain_path), read_checkpoint(pretrained_path),
                           MismatchPolicy(policy), workers=_workers(ctx, workers))
    write_checkpoint(tau, out)
    console.print(f"task vector: {len(tau)} tensors -> {out}")


@tv.command("apply")
@click.option("--target", "target_path", type=EXISTING_FILE, required=True, help="IR fine-tuned checkpoint")
@click.option("--task-vector", "tau_path", type=EXISTING_FILE, required=True)
@click.option("--alpha", type=float, required=True, help="Scaling factor")
@click.option("--out", type=OUT_FILE, required=True)
@click.option("--policy", type=POLICY, default=MismatchPolicy.STRICT.value, show_default=True)
@_workers_option
@click.pass_context
def tv_apply(ctx, target_path, tau_path, alpha, out, policy, workers):
    """merged = target + alpha * tau."""
    spec = MergeSpec(alpha=alpha, mismatch_policy=MismatchPolicy(policy))
    merged = apply_task_vector(read_checkpoint(target_path), read_checkpoint(tau_path), spec,
                               workers=_workers(ctx, workers))
    write_checkpoint(merged, out)
    console.print(f"merged (alpha={format_alpha(alpha)}): {len(merged)} tensors -> {out}")


@tv.command("combine")
@click.option("--term", "terms", type=(EXISTING_FILE, float), multiple=True, required=True,
              help="Task vector and its weight; repeatable")
@click.option("--out", type=OUT_FILE, required=True)
@_workers_option
@click.pass_context
def tv_combine(ctx, terms: Sequence[Tuple[Path, float]], out, workers):
    """Weighted sum of task vectors."""
    combined = combine_task_vectors([(read_checkpoint(p), w) for p, w in terms], workers=_workers(ctx, workers))
    write_checkpoint(combined, out)
    console.print(f"combined {len(terms)} task vectors -> {out}")


@tv.command("negate")
@click.option("--task-vector", "tau_path", type=EXISTING_FILE, required=True)
@click.option("--out", type=OUT_FILE, required=True)
def tv_negate(tau_path, out):
    write_checkpoint(negate_task_vector(read_checkpoint(tau_path)), out)
    console.print(f"negated -> {out}")


# ---------------------------------------------------------------------------
# first stage


@cli.group()
def index():
    """BM25 inverted index."""


@index.command("build")
@click.option("--corpus", type=EXISTING_FILE, required=True, help="Corpus JSONL")
@click.option("--out", type=OUT_FILE, required=True)
@click.option("--k1", type=float, default=None)
@click.option("--b", type=float, default=None)
@click.option("--ascii-fold/--no-ascii-fold", default=None)
@click.pass_context
def index_build(ctx, corpus, out, k1, b, ascii_fold):
    defaults = _settings(ctx).retrieval
    built = build_index(read_corpus(corpus), k1=defaults.k1 if k1 is None else k1,
                        b=defaults.b if b is None else b,
                        ascii_fold=defaults.ascii_fold if ascii_fold is None else ascii_fold)
    save_index(built, out)
    console.print(f"index: {built.N} documents, {len(built.postings)} terms -> {out}")


@cli.command("search")
@click.option("--index", "index_path", type=EXISTING_FILE, required=True)
@click.option("--queries", type=EXISTING_FILE, required=True, help="Queries JSONL")
@click.option("--k", type=click.IntRange(min=1), default=None, help="Depth (default from tool config)")
@click.option("--out", type=OUT_FILE, required=True)
@_workers_option
@click.pass_context
def search_cmd(ctx, index_path, queries, k, out, workers):
    """Top-k BM25 retrieval into a TREC run."""
    depth = k or _settings(ctx).retrieval.depth
    run = search_many(load_index(index_path), read_queries(queries), depth, workers=_workers(ctx, workers))
    write_run(run, out, tag="bm25")
    console.print(f"run: {len(run)} queries -> {out}")


# ---------------------------------------------------------------------------
# second stage and fusion


@cli.command("rerank")
@click.option("--model", "model_path", type=EXISTING_FILE, default=None, help="Toy bi-encoder weights")
@click.option("--vocab", "vocab_path", type=EXISTING_FILE, default=None, help="Vocab sidecar (default: next to model)")
@click.option("--scores", "scores_path", type=EXISTING_FILE, default=None, help="External score table TSV")
@click.option("--run", "run_path", type=EXISTING_FILE, required=True, help="First-stage run")
@click.option("--corpus", type=EXISTING_FILE, default=None)
@click.option("--queries", type=EXISTING_FILE, default=None)
@click.option("--k", type=click.IntRange(min=1), default=None)
@click.option("--ascii-fold/--no-ascii-fold", default=None)
@click.option("--out", type=OUT_FILE, required=True)
@_workers_option
@click.pass_context
def rerank_cmd(ctx, model_path, vocab_path, scores_path, run_path, corpus, queries, k, ascii_fold, out, workers):
    """Rescore first-stage candidates with the toy encoder or a score table."""
    if (model_path is None) == (scores_path is None):
        raise UsageError("Give exactly one of --model or --scores")
    query_map = read_queries(queries) if queries else None
    if model_path is not None:
        if corpus is None or query_map is None:
            raise UsageError("--model needs --corpus and --queries")
        fold = _settings(ctx).retrieval.ascii_fold if ascii_fold is None else ascii_fold
        scorer = BiEncoderScorer(load_bi_encoder(model_path, vocab_path, ascii_fold=fold),
                                 corpus_map(read_corpus(corpus)), name=model_path.stem)
    else:
        scorer = read_scores(scores_path)
    run = rerank(scorer, read_run(run_path), query_map, k=k, workers=_workers(ctx, workers))
    write_run(run, out)
    console.print(f"re-ranked: {len(run)} queries -> {out}")


@cli.command("fuse")
@click.option("--bm25-run", type=EXISTING_FILE, required=True)
@click.option("--llm-run", type=EXISTING_FILE, required=True)
@click.option("--lambda-bm25", type=float, default=None)
@click.option("--lambda-llm", type=float, default=None)
@click.option("--normalization", type=NORMALIZATION, default=None)
@click.option("--out", type=OUT_FILE, required=True)
@click.pass_context
def fuse_cmd(ctx, bm25_run, llm_run, lambda_bm25, lambda_llm, normalization, out):
    """lambda_bm25 * bm25 + lambda_llm * llm per candidate."""
    defaults = _settings(ctx).fusion
    weights = FusionWeights(defaults.lambda_bm25 if lambda_bm25 is None else lambda_bm25,
                            defaults.lambda_llm if lambda_llm is None else lambda_llm)
    fused = fuse_runs(read_run(bm25_run), read_run(llm_run), weights, normalization or defaults.normalization)
    write_run(fused, out)
    console.print(f"fused ({fused.tag}) -> {out}")


@cli.command("tune-fusion")
@click.option("--bm25-run", type=EXISTING_FILE, required=True)
@click.option("--llm-run", type=EXISTING_FILE, required=True)
@click.option("--qrels", type=EXISTING_FILE, required=True)
@click.option("--metric", default=None, help="Objective (default from tool config)")
@click.option("--grid-step", type=float, default=None)
@click.option("--normalization", type=NORMALIZATION, default=None)
@click.option("--gain", type=GAIN, default=None)
@click.option("--out", type=OUT_FILE, default=None, help="Write the selected weights as JSON")
@click.pass_context
def tune_fusion_cmd(ctx, bm25_run, llm_run, qrels, metric, grid_step, normalization, gain, out):
    """Grid search of the two fusion weights on a development set."""
    settings = _settings(ctx)
    weights = tune_fusion(read_run(bm25_run), read_run(llm_run), read_qrels(qrels),
                          metric or settings.sweep.objective_metric,
                          grid_step or settings.fusion.grid_step,
                          normalization or settings.fusion.normalization,
                          gain or settings.evaluation.gain)
    if out:
        out.write_text(canonical_json(weights.to_dict()), encoding="utf-8")
    console.print(f"lambda_bm25={weights.lambda_bm25!r} lambda_llm={weights.lambda_llm!r}")


@cli.command("sweep-alpha")
@click.option("--config", "config_path", type=EXISTING_FILE, required=True, help="Experiment JSON")
@click.option("--out", type=OUT_FILE, default=None, help="Write the sweep table as JSON")
@_workers_option
@click.pass_context
def sweep_alpha_cmd(ctx, config_path, out, workers):
    """Select the scaling factor on the development sets."""
    config = load_experiment_config(config_path)
    if not config.sweep.enabled:
        raise UsageError("The experiment config disables the sweep")
    result = sweep_alpha(config, workers=_workers(ctx, workers))
    if out:
        out.write_text(canonical_json(result.to_dict()), encoding="utf-8")

    table = Table(title=f"alpha sweep ({result.objective_metric})", box=box.SIMPLE)
    table.add_column("alpha", justify="right")
    dev_names = list(next(iter(result.per_dev_set.values())).keys())
    for name in dev_names:
        table.add_column(name, justify="right")
    table.add_column("mean", justify="right")
    for key, mean in result.table.items():
        marker = " <" if key == format_alpha(result.alpha_star) else ""
        table.add_row(key, *(f"{result.per_dev_set[key][n]:.4f}" for n in dev_names), f"{mean:.4f}{marker}")
    console.print(table)
    console.print(f"alpha* = {format_alpha(result.alpha_star)}")


# ---------------------------------------------------------------------------
# evaluation


@cli.command("eval")
@click.option("--run", "run_path", type=EXISTING_FILE, required=True)
@click.option("--qrels", type=EXISTING_FILE, required=True)
@click.option("--metrics", default=None, help="Comma-separated, e.g. P@10,NDCG@3,NDCG@10,MAP@100")
@click.option("--gain", type=GAIN, default=None)
@click.option("--out", type=OUT_FILE, default=None, help="Write the report as JSON")
@click.pass_context
def eval_cmd(ctx, run_path, qrels, metrics, gain, out):
    """Per-query and mean metrics of a run."""
    report = evaluate_run(read_run(run_path), read_qrels(qrels), _metric_list(metrics, ctx),
                          gain or _settings(ctx).evaluation.gain)
    if out:
        out.write_text(canonical_json(report.to_dict()), encoding="utf-8")
    click.echo(render_table({run_path.stem: report}), nl=False)


@cli.command("sigtest")
@click.option("--run-a", type=EXISTING_FILE, required=True, help="Experimental run")
@click.option("--run-b", type=EXISTING_FILE, multiple=True, required=True, help="Baseline run; repeatable")
@click.option("--qrels", type=EXISTING_FILE, required=True)
@click.option("--metric", required=True, help="Per-query metric feeding the tests")
@click.option("--family-alpha", type=float, default=None)
@click.option("--gain", type=GAIN, default=None)
@click.option("--out", type=OUT_FILE, default=None)
@click.pass_context
def sigtest_cmd(ctx, run_a, run_b, qrels, metric, family_alpha, gain, out):
    """Bonferroni-corrected paired t-tests of one run against baselines."""
    settings = _settings(ctx)
    judgments = read_qrels(qrels)
    gain = gain or settings.evaluation.gain

    def report_for(path: Path) -> EvalReport:
        return evaluate_run(read_run(path), judgments, [metric], gain)

    baselines = {}
    for path in run_b:
        name = path.stem if path.stem not in baselines else str(path)
        baselines[name] = report_for(path)
    result = compare_runs(run_a.stem, report_for(run_a), baselines, metric,
                          family_alpha or settings.evaluation.family_alpha)
    if out:
        out.write_text(canonical_json(result.to_dict()), encoding="utf-8")

    table = Table(title=f"{result.experimental} vs baselines ({result.metric})", box=box.SIMPLE)
    for column in ("baseline", "mean", "t", "df", "p", "p_adj", "sig"):
        table.add_column(column, justify="left" if column == "baseline" else "right")
    for name, c in result.comparisons.items():
        label = f"{name} (best)" if name == result.best_baseline else name
        table.add_row(label, f"{c.baseline_mean:.4f}", f"{c.t:.4f}", str(c.df), f"{c.p_value:.6f}",
                      f"{c.p_adjusted:.6f}", "*" if c.significant else "")
    console.print(table)


@cli.command("dev-split")
@click.option("--qrels", type=EXISTING_FILE, required=True)
@click.option("--fraction", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dev", type=OUT_FILE, required=True)
@click.option("--out-rest", type=OUT_FILE, required=True)
def dev_split_cmd(qrels, fraction, seed, out_dev, out_rest):
    """Seeded split of judged queries into a development subset and the rest."""
    dev, rest = split_queries(read_qrels(qrels), fraction, seed)
    write_qrels(dev, out_dev)
    write_qrels(rest, out_rest)
    console.print(f"dev: {len(dev.query_ids())} queries, rest: {len(rest.query_ids())} queries")


# ---------------------------------------------------------------------------
# toy fixtures


@cli.group()
def fixture():
    """Seeded toy collection and checkpoint triple."""


@fixture.command("train")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=EXISTING_FILE, required=True, help="Training YAML or JSON")
@click.option("--out-dir", type=OUT_DIR, required=True)
def fixture_train(seed, config_path, out_dir):
    """Train pretrained, domain and ir toy checkpoints."""
    triple = train_fixture(seed, load_fixture_config(config_path))
    paths = write_fixture(triple, out_dir)
    for phase, losses in triple.losses.items():
        if losses:
            console.print(f"{phase}: loss {losses[0]:.6f} -> {losses[-1]:.6f}")
    console.print(f"checkpoints -> {paths['ir'].parent}")


@fixture.command("collection")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=OUT_DIR, required=True)
@click.option("--train/--no-train", "train", default=False,
              help="Also train the checkpoint triple into OUT_DIR/checkpoints")
def fixture_collection(seed, out_dir, train):
    """Write the synthetic corpus, queries, qrels, dev sets and experiment config."""
    collection = generate_toy_collection(seed)
    paths = write_toy_collection(collection, out_dir)
    if train:
        write_fixture(train_fixture(seed, collection.fixture_config), out_dir / "checkpoints")
    console.print(f"collection: {len(collection.documents)} documents, {len(collection.queries)} queries"
                  f" -> {out_dir}")
    console.print(f"experiment config: {paths['experiment']}")


# ---------------------------------------------------------------------------
# experiments


@cli.group()
def experiment():
    """Full experiments from a JSON document."""


@experiment.command("run")
@click.option("--config", "config_path", type=EXISTING_FILE, required=True, help="Experiment JSON")
@click.option("--alpha", type=float, default=None, help="Fixed scaling factor (implies --no-sweep)")
@click.option("--no-sweep", is_flag=True, default=False, help="Skip the alpha sweep")
@click.option("--output-dir", type=OUT_DIR, default=None)
@_workers_option
@click.pass_context
def experiment_run(ctx, config_path, alpha, no_sweep, output_dir, workers):
    """Merge, retrieve, re-rank, fuse and evaluate every variant."""
    config = load_experiment_config(config_path)
    updates = {}
    if alpha is not None:
        updates["alpha"] = MergeSpec(alpha=alpha).alpha
    if no_sweep or alpha is not None:
        updates["sweep"] = config.sweep.model_copy(update={"enabled": False})
    if output_dir is not None:
        updates["output_dir"] = output_dir.resolve()
    if updates:
        config = config.model_copy(update=updates)

    result = run_experiment(config, workers=_workers(ctx, workers))
    click.echo(result.artifacts["report_table"].read_text(encoding="utf-8"), nl=False)
    console.print(f"report -> {result.artifacts['report']}")


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="taskfuse", standalone_mode=False)
    except TaskfuseError as e:
        logger.debug("Command failed", error=type(e).__name__, exit_code=e.exit_code)
        err_console.print(f"error: {e}", markup=False, highlight=False, soft_wrap=True)
        return e.exit_code
    except OSError as e:
        # unreadable or unwritable files are data errors
        err_console.print(f"error: {e}", markup=False, highlight=False, soft_wrap=True)
        return DataFormatError.exit_code
    except click.exceptions.Abort:
        err_console.print("aborted", markup=False)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
