"""Tests for the experiment document and the scaling-factor sweep."""

import json

import numpy as np
import pytest

from services.evaluation import evaluate_run
from services.lib.common import format_alpha
from services.lib.exceptions import ConfigError, DataFormatError, EmptyEvaluationError, MissingInputError
from services.pipeline import (
    CheckpointSource,
    fuse_runs,
    load_dev_set,
    load_experiment_config,
    parse_experiment_config,
    sweep_alpha,
)
from services.pipeline.fusion import FusionWeights
from services.reranker import (
    BiEncoderScorer,
    ScoredPair,
    ToyBiEncoder,
    load_bi_encoder,
    rerank,
    save_bi_encoder,
    write_scores,
)

IDEAL = {"q1": {"d2": 1.0, "d1": 0.0}, "q2": {"d3": 1.0, "d2": 0.0}}


def write_table(path, q1_ideal, q2_ideal):
    """Score table over the BM25 candidates of the cat/dog collection."""
    pairs = []
    for qid, ideal in (("q1", q1_ideal), ("q2", q2_ideal)):
        for doc_id, score in IDEAL[qid].items():
            pairs.append(ScoredPair(qid, doc_id, score if ideal else 1.0 - score))
    write_scores(pairs, path)
    return path.name


def sweep_document(toy_files, alphas, tables=None, **extra):
    files = {key: path.name for key, path in toy_files.items()}
    data = {
        "evaluation": dict(files),
        "fusion": {"lambda_bm25": 0.0, "lambda_llm": 1.0},
        "sweep": {
            "enabled": True,
            "alphas": alphas,
            "dev_sets": [{"name": "dev", **files}],
            "score_tables": {str(a): {"dev": name} for a, name in (tables or {}).items()},
        },
    }
    data.update(extra)
    return data


def test_sweep_selects_the_peak(tmp_path, toy_files):
    alphas = [round(0.1 * i, 1) for i in range(1, 11)]
    tables = {}
    for alpha in alphas:
        distance = abs(alpha - 0.7)
        tables[format_alpha(alpha)] = write_table(tmp_path / f"scores-{alpha}.tsv", distance < 0.25, distance < 0.05)
    config = parse_experiment_config(sweep_document(toy_files, alphas, tables), tmp_path)

    result = sweep_alpha(config)
    assert result.alpha_star == 0.7
    assert result.table["0.7"] == 1.0
    assert max(result.table.values()) == result.table["0.7"]
    assert sum(1 for v in result.table.values() if v == 1.0) == 1
    assert result.evaluated_alphas == alphas
    assert set(result.per_dev_set["0.7"]) == {"dev"}


def test_sweep_ties_go_to_smallest_alpha(tmp_path, toy_files):
    alphas = [0.3, 0.1, 0.2]
    name = write_table(tmp_path / "same.tsv", True, False)
    config = parse_experiment_config(sweep_document(toy_files, alphas, {a: name for a in alphas}), tmp_path)
    result = sweep_alpha(config)
    assert result.alpha_star == 0.1
    assert result.evaluated_alphas == [0.1, 0.2, 0.3]


def test_singleton_grid(tmp_path, toy_files):
    name = write_table(tmp_path / "bad.tsv", False, False)
    config = parse_experiment_config(sweep_document(toy_files, [1.0], {1.0: name}), tmp_path)
    result = sweep_alpha(config)
    assert result.alpha_star == 1.0
    assert result.evaluated_alphas == [1.0]
    assert list(result.table) == ["1.0"]


def test_missing_table_without_checkpoints(tmp_path, toy_files):
    name = write_table(tmp_path / "s.tsv", True, True)
    config = parse_experiment_config(sweep_document(toy_files, [0.5, 1.0], {1.0: name}), tmp_path)
    with pytest.raises(MissingInputError, match="alpha=0.5"):
        sweep_alpha(config)


def test_dev_set_without_relevant_documents(tmp_path, toy_files):
    toy_files["qrels"].write_text("q1 0 d1 0\n", encoding="utf-8")
    config = parse_experiment_config(sweep_document(toy_files, [1.0]), tmp_path)
    with pytest.raises(EmptyEvaluationError):
        load_dev_set(config, config.sweep.dev_sets[0])


def _save_triple(directory):
    vocab = ["cat", "sat", "ran", "dog"]
    rng = np.random.default_rng(0)
    paths = {}
    for role in ("pretrained", "domain", "ir"):
        model = ToyBiEncoder(vocab=vocab, embedding=rng.normal(size=(4, 3)), projection=rng.normal(size=(3, 3)))
        paths[role] = directory / f"{role}.safetensors"
        save_bi_encoder(model, paths[role])
    return paths


def test_sweep_with_checkpoints_matches_direct_ir_scoring(tmp_path, toy_files):
    paths = _save_triple(tmp_path)
    checkpoints = {role: path.name for role, path in paths.items()}
    config = parse_experiment_config(sweep_document(toy_files, [0.0, 0.5], checkpoints=checkpoints), tmp_path)
    source = CheckpointSource(config)
    dev = load_dev_set(config, config.sweep.dev_sets[0])

    result = sweep_alpha(config, dev_data=[dev], source=source)
    assert set(result.table) == {"0.0", "0.5"}

    scorer = BiEncoderScorer(load_bi_encoder(paths["ir"]), dev.corpus)
    fused = fuse_runs(dev.first_stage, rerank(scorer, dev.first_stage, dev.queries), FusionWeights(0.0, 1.0))
    assert result.table["0.0"] == evaluate_run(fused, dev.qrels, ["NDCG@10"]).aggregate["NDCG@10"]


def test_dev_set_first_stage_is_bm25(tmp_path, toy_files):
    config = parse_experiment_config(sweep_document(toy_files, [1.0]), tmp_path)
    dev = load_dev_set(config, config.sweep.dev_sets[0])
    assert dev.first_stage.doc_ids("q1") == ["d2", "d1"]
    assert sorted(dev.first_stage.doc_ids("q2")) == ["d2", "d3"]


# experiment document


def test_config_paths_are_relative_to_file(tmp_path, toy_files):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(sweep_document(toy_files, [1.0])), encoding="utf-8")
    config = load_experiment_config(path)
    assert config.evaluation.corpus == toy_files["corpus"].resolve()
    assert config.output_dir == tmp_path.resolve() / "output"
    assert config.relative(config.evaluation.qrels) == "qrels.txt"


def test_canonical_text_ignores_location(tmp_path, toy_files):
    first = parse_experiment_config(sweep_document(toy_files, [1.0]), tmp_path)
    second = parse_experiment_config(sweep_document(toy_files, [1.0]), tmp_path / "elsewhere")
    assert first.canonical_text() == second.canonical_text()


def test_missing_inputs_are_listed(tmp_path, toy_files):
    data = sweep_document(toy_files, [1.0])
    data["evaluation"]["qrels"] = "absent.txt"
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(MissingInputError, match="evaluation.qrels"):
        load_experiment_config(path)


@pytest.mark.parametrize("change", [
    {"first_stage_depth": 0},
    {"alpha": float("inf")},
    {"metrics": ["MRR@10"]},
    {"unknown_field": 1},
    {"fusion": {"lambda_bm25": 1.5}},
])
def test_invalid_documents(tmp_path, toy_files, change):
    with pytest.raises(ConfigError):
        parse_experiment_config({**sweep_document(toy_files, [1.0]), **change}, tmp_path)


def test_sweep_needs_dev_sets(tmp_path, toy_files):
    data = sweep_document(toy_files, [1.0])
    data["sweep"]["dev_sets"] = []
    with pytest.raises(ConfigError, match="dev set"):
        parse_experiment_config(data, tmp_path)
    data["sweep"] = {"enabled": True, "alphas": [], "dev_sets": sweep_document(toy_files, [1.0])["sweep"]["dev_sets"]}
    with pytest.raises(ConfigError):
        parse_experiment_config(data, tmp_path)


def test_unknown_fusion_dev_set(tmp_path, toy_files):
    data = sweep_document(toy_files, [1.0])
    data["evaluation"]["fusion_dev_set"] = "nope"
    with pytest.raises(ConfigError, match="nope"):
        parse_experiment_config(data, tmp_path)


def test_experiment_file_errors(tmp_path):
    with pytest.raises(MissingInputError):
        load_experiment_config(tmp_path / "absent.json")
    path = tmp_path / "bad.json"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_experiment_config(path)
