"""Tests for the toy bi-encoder, score tables and re-ranking."""

import numpy as np
import pytest

from services.evaluation.trec_io import Run
from services.lib.constants import EMBEDDING_TENSOR, PROJECTION_TENSOR, Role
from services.lib.exceptions import (
    DataFormatError,
    InvariantViolation,
    MissingInputError,
    MissingScoreError,
    UnknownQueryError,
    UsageError,
)
from services.reranker import (
    BiEncoderScorer,
    ExternalScoreTable,
    ScoredPair,
    ToyBiEncoder,
    load_bi_encoder,
    read_scores,
    rerank,
    run_to_pairs,
    save_bi_encoder,
    write_scores,
)
from services.retrieval.corpus import Document, corpus_map
from services.tensor_store import Checkpoint


@pytest.fixture
def tiny_model():
    return ToyBiEncoder(vocab=["a", "b"], embedding=np.array([[3.0, 0.0], [0.0, 4.0]]), projection=np.eye(2))


def random_model(seed, vocab_size=20, dim=6):
    rng = np.random.default_rng(seed)
    vocab = [f"t{i}" for i in range(vocab_size)]
    return ToyBiEncoder(vocab=vocab, embedding=rng.normal(size=(vocab_size, dim)),
                        projection=rng.normal(size=(dim, dim)))


def test_encode_worked_example(tiny_model):
    np.testing.assert_allclose(tiny_model.encode("a b"), [0.6, 0.8], atol=1e-12)


def test_encode_without_known_terms_is_zero(tiny_model):
    vector = tiny_model.encode("zzz qqq")
    assert vector.shape == (2,)
    assert not vector.any()
    assert tiny_model.score_pair("zzz", Document("d", "", "a b")) == 0.0


def test_unknown_terms_are_ignored(tiny_model):
    np.testing.assert_array_equal(tiny_model.encode("a zzz b"), tiny_model.encode("a b"))


def test_repeated_terms_weigh_more(tiny_model):
    assert not np.allclose(tiny_model.encode("a a b"), tiny_model.encode("a b"))


def test_scores_are_cosines():
    model = random_model(0)
    rng = np.random.default_rng(1)
    for _ in range(100):
        q = " ".join(model.vocab[int(i)] for i in rng.integers(20, size=3))
        d = Document("d", "", " ".join(model.vocab[int(i)] for i in rng.integers(20, size=8)))
        score = model.score_pair(q, d)
        assert -1.0 - 1e-12 <= score <= 1.0 + 1e-12


def test_shape_checks():
    with pytest.raises(InvariantViolation):
        ToyBiEncoder(vocab=["a"], embedding=np.zeros((2, 3)), projection=np.eye(3))
    with pytest.raises(InvariantViolation):
        ToyBiEncoder(vocab=["a"], embedding=np.zeros((1, 3)), projection=np.eye(2))
    with pytest.raises(InvariantViolation):
        ToyBiEncoder(vocab=["a", "a"], embedding=np.zeros((2, 3)), projection=np.eye(3))


def test_save_and_load(tmp_path):
    model = random_model(3)
    save_bi_encoder(model, tmp_path / "m.safetensors", role=Role.IR)
    assert (tmp_path / "vocab.json").exists()
    loaded = load_bi_encoder(tmp_path / "m.safetensors")
    assert loaded.vocab == model.vocab
    np.testing.assert_array_equal(loaded.embedding, model.embedding.astype(np.float32))
    np.testing.assert_array_equal(loaded.projection, model.projection.astype(np.float32))


def test_checkpoint_without_weights_is_rejected():
    ckpt = Checkpoint.from_arrays({EMBEDDING_TENSOR: np.zeros((2, 2), dtype=np.float32)})
    with pytest.raises(DataFormatError, match=PROJECTION_TENSOR):
        ToyBiEncoder.from_checkpoint(ckpt, ["a", "b"])


def test_checkpoint_with_wrong_vocab_size_is_rejected():
    ckpt = random_model(0, vocab_size=4).to_checkpoint()
    with pytest.raises(DataFormatError):
        ToyBiEncoder.from_checkpoint(ckpt, ["a", "b"])


def test_checkpoint_role_metadata():
    ckpt = random_model(0).to_checkpoint(Role.DOMAIN)
    assert ckpt.role == "domain"
    assert ckpt.metadata["vocab_size"] == "20"


# score tables and re-ranking


def test_score_table_round_trip(tmp_path):
    pairs = [ScoredPair("q1", "d2", 0.25), ScoredPair("q1", "d1", -1.5), ScoredPair("q0", "d9", 3.0)]
    write_scores(pairs, tmp_path / "s.tsv")
    table = read_scores(tmp_path / "s.tsv")
    assert table.pairs() == sorted(pairs, key=lambda p: (p.query_id, p.doc_id))


@pytest.mark.parametrize("line,match", [
    ("q1\td1", "tabs"),
    ("q1\td1\tabc", "not a number"),
    ("q1\td1\tnan", "not finite"),
    ("q1\td1\t1\nq1\td1\t2", "duplicate"),
])
def test_score_table_errors(tmp_path, line, match):
    path = tmp_path / "s.tsv"
    path.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match=match):
        read_scores(path)


def test_score_table_missing_file(tmp_path):
    with pytest.raises(MissingInputError):
        read_scores(tmp_path / "absent.tsv")


def test_missing_score_names_candidates(simple_run):
    table = ExternalScoreTable({("q1", "d1"): 1.0, ("q1", "d2"): 2.0})
    with pytest.raises(MissingScoreError, match="d3"):
        rerank(table, simple_run)


def test_unknown_query_in_table(simple_run):
    table = ExternalScoreTable({("q9", "d1"): 1.0})
    with pytest.raises(UnknownQueryError):
        rerank(table, simple_run)


def test_rerank_reverses_with_reversed_scores(simple_run):
    scores = {("q1", d): -s for d, s in simple_run.rankings["q1"]}
    reranked = rerank(ExternalScoreTable(scores), simple_run)
    assert reranked.doc_ids("q1") == list(reversed(simple_run.doc_ids("q1")))


def test_rerank_keeps_order_with_same_scores(simple_run):
    table = ExternalScoreTable({("q1", p.doc_id): p.score for p in run_to_pairs(simple_run)})
    assert rerank(table, simple_run).rankings == simple_run.rankings


def test_rerank_truncates_to_k(simple_run):
    table = ExternalScoreTable({("q1", p.doc_id): p.score for p in run_to_pairs(simple_run)})
    assert rerank(table, simple_run, k=2).doc_ids("q1") == ["d2", "d3"]
    with pytest.raises(UsageError):
        rerank(table, simple_run, k=0)


def test_rerank_needs_query_text(simple_run, tiny_model, three_docs):
    scorer = BiEncoderScorer(tiny_model, corpus_map(three_docs))
    with pytest.raises(UnknownQueryError):
        rerank(scorer, simple_run, {"q2": "a"})


def test_bi_encoder_scorer_missing_document(tiny_model):
    run = Run({"q1": [("ghost", 1.0)]})
    with pytest.raises(MissingInputError, match="ghost"):
        rerank(BiEncoderScorer(tiny_model, {}), run, {"q1": "a"})


def test_bi_encoder_rerank_is_worker_independent():
    model = random_model(4)
    rng = np.random.default_rng(9)
    docs = [Document(f"d{i}", "", " ".join(model.vocab[int(j)] for j in rng.integers(20, size=6))) for i in range(30)]
    run = Run({f"q{n}": [(d.doc_id, float(i)) for i, d in enumerate(docs)] for n in range(8)})
    queries = {f"q{n}": " ".join(model.vocab[int(j)] for j in rng.integers(20, size=2)) for n in range(8)}
    scorer = BiEncoderScorer(model, corpus_map(docs))
    assert rerank(scorer, run, queries, workers=1).rankings == rerank(scorer, run, queries, workers=4).rankings


def test_identical_texts_score_one():
    model = random_model(5)
    text = "t1 t4 t4 t9"
    assert model.score_pair(text, Document("d", "", text)) == pytest.approx(1.0, abs=1e-6)


def test_score_is_symmetric_without_title():
    model = random_model(6)
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = " ".join(model.vocab[int(i)] for i in rng.integers(20, size=4))
        b = " ".join(model.vocab[int(i)] for i in rng.integers(20, size=7))
        assert model.score_pair(a, Document("x", "", b)) == pytest.approx(model.score_pair(b, Document("y", "", a)),
                                                                          abs=1e-6)


def test_encode_norm_is_zero_or_one():
    model = random_model(8)
    rng = np.random.default_rng(4)
    for _ in range(100):
        words = [model.vocab[int(i)] for i in rng.integers(20, size=int(rng.integers(0, 6)))]
        norm = float(np.linalg.norm(model.encode(" ".join(words + ["oov"]))))
        assert norm == 0.0 or abs(norm - 1.0) < 1e-6


def test_rare_term_candidate_ranks_first():
    model = ToyBiEncoder(vocab=["common", "rare"], embedding=np.eye(2), projection=np.eye(2))
    docs = [Document("d1", "", "common common"), Document("d2", "", "common rare"), Document("d3", "", "common")]
    run = Run({"q1": [("d1", 3.0), ("d2", 2.0), ("d3", 1.0)]})
    reranked = rerank(BiEncoderScorer(model, corpus_map(docs)), run, {"q1": "rare"})
    assert reranked.doc_ids("q1")[0] == "d2"
