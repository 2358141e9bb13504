"""Tests for the taskfuse command line."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from services import __version__
from services.evaluation import Run, read_qrels, read_run, write_run
from services.lib.logger import configure_logging
from services.task_arith import diff_checkpoints
from services.tensor_store import Checkpoint, read_checkpoint, write_checkpoint
from tools.cli import cli, main


@pytest.fixture(autouse=True)
def restore_logging():
    yield
    # the CLI binds a stderr sink to whatever stream the test captured
    configure_logging(level="WARNING")


def run_ok(*args):
    result = CliRunner().invoke(cli, ["--log-level", "WARNING", *map(str, args)], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def test_version():
    result = CliRunner().invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_task_vector_commands(tmp_path, make_checkpoint):
    pretrained, domain, target = (make_checkpoint(seed) for seed in (1, 2, 3))
    for name, ckpt in (("pre", pretrained), ("dom", domain), ("ir", target)):
        write_checkpoint(ckpt, tmp_path / f"{name}.safetensors")

    run_ok("tv", "diff", "--domain", tmp_path / "dom.safetensors", "--pretrained", tmp_path / "pre.safetensors",
           "--out", tmp_path / "tau.safetensors")
    tau = read_checkpoint(tmp_path / "tau.safetensors")
    assert tau == diff_checkpoints(domain, pretrained)

    run_ok("tv", "apply", "--target", tmp_path / "ir.safetensors", "--task-vector", tmp_path / "tau.safetensors",
           "--alpha", "0", "--out", tmp_path / "zero.safetensors")
    merged = read_checkpoint(tmp_path / "zero.safetensors")
    for name in target.names():
        assert merged[name].data == target[name].data

    run_ok("tv", "negate", "--task-vector", tmp_path / "tau.safetensors", "--out", tmp_path / "neg.safetensors")
    run_ok("tv", "combine", "--term", tmp_path / "tau.safetensors", "1", "--term", tmp_path / "neg.safetensors", "1",
           "--out", tmp_path / "sum.safetensors")
    total = read_checkpoint(tmp_path / "sum.safetensors")
    for name in total.names():
        assert not total.array(name).any()


def test_retrieval_and_evaluation_commands(tmp_path, toy_files):
    run_ok("index", "build", "--corpus", toy_files["corpus"], "--out", tmp_path / "index.json")
    run_ok("search", "--index", tmp_path / "index.json", "--queries", toy_files["queries"], "--k", 10,
           "--out", tmp_path / "bm25.trec")
    assert read_run(tmp_path / "bm25.trec").doc_ids("q1") == ["d2", "d1"]

    result = run_ok("eval", "--run", tmp_path / "bm25.trec", "--qrels", toy_files["qrels"],
                    "--metrics", "P@1,NDCG@10", "--out", tmp_path / "report.json")
    assert "NDCG@10" in result.output
    report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert report["evaluated_query_count"] == 2
    assert report["aggregate"]["P@1"] == 1.0


def test_rerank_fuse_and_tune(tmp_path, toy_files):
    bm25 = Run({"q1": [("d2", 2.0), ("d1", 1.0)], "q2": [("d3", 2.0), ("d2", 1.0)]}, tag="bm25")
    write_run(bm25, tmp_path / "bm25.trec")
    (tmp_path / "scores.tsv").write_text("q1\td1\t0.9\nq1\td2\t0.1\nq2\td2\t0.3\nq2\td3\t0.8\n", encoding="utf-8")

    run_ok("rerank", "--scores", tmp_path / "scores.tsv", "--run", tmp_path / "bm25.trec",
           "--out", tmp_path / "llm.trec")
    assert read_run(tmp_path / "llm.trec").doc_ids("q1") == ["d1", "d2"]

    run_ok("fuse", "--bm25-run", tmp_path / "bm25.trec", "--llm-run", tmp_path / "llm.trec",
           "--lambda-bm25", "1", "--lambda-llm", "0", "--out", tmp_path / "fused.trec")
    assert read_run(tmp_path / "fused.trec").doc_ids("q1") == ["d2", "d1"]

    run_ok("tune-fusion", "--bm25-run", tmp_path / "bm25.trec", "--llm-run", tmp_path / "llm.trec",
           "--qrels", toy_files["qrels"], "--metric", "NDCG@10", "--out", tmp_path / "weights.json")
    weights = json.loads((tmp_path / "weights.json").read_text(encoding="utf-8"))
    assert weights == {"lambda_bm25": 0.1, "lambda_llm": 0.0}


def test_sigtest_and_dev_split(tmp_path, toy_files):
    good = Run({"q1": [("d2", 2.0), ("d1", 1.0)], "q2": [("d3", 2.0), ("d2", 1.0)]})
    bad = Run({"q1": [("d3", 2.0), ("d1", 1.0)], "q2": [("d2", 2.0), ("d1", 1.0)]})
    write_run(good, tmp_path / "good.trec")
    write_run(bad, tmp_path / "bad.trec")
    run_ok("sigtest", "--run-a", tmp_path / "good.trec", "--run-b", tmp_path / "bad.trec",
           "--qrels", toy_files["qrels"], "--metric", "NDCG@10", "--out", tmp_path / "sig.json")
    result = json.loads((tmp_path / "sig.json").read_text(encoding="utf-8"))
    assert result["best_baseline"] == "bad"
    assert result["metric"] == "NDCG@10"

    run_ok("dev-split", "--qrels", toy_files["qrels"], "--fraction", "0.5", "--seed", "1",
           "--out-dev", tmp_path / "dev.txt", "--out-rest", tmp_path / "rest.txt")
    dev, rest = read_qrels(tmp_path / "dev.txt"), read_qrels(tmp_path / "rest.txt")
    assert sorted(dev.query_ids() + rest.query_ids()) == ["q1", "q2"]


def test_fixture_train(tmp_path):
    config = {
        "dim": 3,
        "vocab": ["a", "b", "c"],
        "general_pairs": [["a", "b"], ["b", "c"]],
        "domain_pairs": [["a", "c"]],
        "retrieval_pairs": [["b", "a b"]],
        "pretrain_steps": 2,
        "domain_steps": 2,
        "ir_steps": 2,
        "learning_rate": 0.01,
    }
    (tmp_path / "fixture.yaml").write_text(json.dumps(config), encoding="utf-8")
    run_ok("fixture", "train", "--seed", "4", "--config", tmp_path / "fixture.yaml", "--out-dir", tmp_path / "ckpt")
    first = (tmp_path / "ckpt" / "ir.safetensors").read_bytes()
    run_ok("fixture", "train", "--seed", "4", "--config", tmp_path / "fixture.yaml", "--out-dir", tmp_path / "again")
    assert (tmp_path / "again" / "ir.safetensors").read_bytes() == first


# exit codes


def test_usage_error_exit_code(tmp_path, toy_files, capsys):
    write_run(Run({"q1": [("d1", 1.0)]}), tmp_path / "run.trec")
    code = main(["rerank", "--run", str(tmp_path / "run.trec"), "--out", str(tmp_path / "x.trec")])
    assert code == 1
    assert "exactly one of --model or --scores" in capsys.readouterr().err


def test_click_usage_error_exit_code():
    assert main(["tv", "apply", "--alpha", "1"]) == 1


def test_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "broken.safetensors").write_bytes(b"\x05\x00\x00\x00\x00\x00\x00\x00{bad}")
    code = main(["tv", "negate", "--task-vector", str(tmp_path / "broken.safetensors"),
                 "--out", str(tmp_path / "out.safetensors")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_unwritable_output_is_a_data_error(tmp_path, toy_files, capsys):
    write_run(Run({"q1": [("d1", 1.0)]}), tmp_path / "run.trec")
    (tmp_path / "blocker").write_text("", encoding="utf-8")
    code = main(["eval", "--run", str(tmp_path / "run.trec"), "--qrels", str(toy_files["qrels"]),
                 "--metrics", "P@10", "--out", str(tmp_path / "blocker" / "report.json")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_contract_error_exit_code(tmp_path, capsys):
    write_checkpoint(Checkpoint.from_arrays({"a": np.zeros(2, dtype=np.float32)}), tmp_path / "one.safetensors")
    write_checkpoint(Checkpoint.from_arrays({"b": np.zeros(2, dtype=np.float32)}), tmp_path / "two.safetensors")
    code = main(["tv", "diff", "--domain", str(tmp_path / "one.safetensors"),
                 "--pretrained", str(tmp_path / "two.safetensors"), "--out", str(tmp_path / "tau.safetensors")])
    assert code == 3
    assert "a, b" in capsys.readouterr().err
    assert not (tmp_path / "tau.safetensors").exists()


def test_experiment_with_missing_checkpoints(tmp_path, capsys):
    run_ok("fixture", "collection", "--seed", "0", "--out-dir", tmp_path / "toy")
    code = main(["experiment", "run", "--config", str(tmp_path / "toy" / "experiment.json")])
    assert code == 2
    assert "checkpoints.ir" in capsys.readouterr().err


def test_experiment_zero_shot_run(tmp_path):
    data = {
        "evaluation": {"corpus": "corpus.jsonl", "queries": "queries.jsonl", "qrels": "qrels.txt"},
        "variant_score_tables": {"merged@1.0": "scores.tsv"},
    }
    (tmp_path / "corpus.jsonl").write_text(
        '{"_id": "d1", "text": "cat sat"}\n{"_id": "d2", "text": "cat cat ran"}\n{"_id": "d3", "text": "dog ran"}\n',
        encoding="utf-8")
    (tmp_path / "queries.jsonl").write_text('{"_id": "q1", "text": "cat"}\n{"_id": "q2", "text": "ran dog"}\n',
                                            encoding="utf-8")
    (tmp_path / "qrels.txt").write_text("q1 0 d1 1\nq1 0 d2 2\nq2 0 d3 1\n", encoding="utf-8")
    (tmp_path / "scores.tsv").write_text("q1\td1\t0.9\nq1\td2\t0.1\nq2\td2\t0.3\nq2\td3\t0.8\n", encoding="utf-8")
    (tmp_path / "exp.json").write_text(json.dumps(data), encoding="utf-8")

    result = run_ok("experiment", "run", "--config", tmp_path / "exp.json", "--alpha", "1", "--no-sweep",
                    "--output-dir", tmp_path / "out")
    assert "merged@1.0" in result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text(encoding="utf-8"))
    assert sorted(report["variants"]) == ["bm25", "merged@1.0"]
    assert report["alpha_star"] == 1.0
