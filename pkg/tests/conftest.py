"""Pytest configuration and shared fixtures for taskfuse tests."""

import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from services.evaluation.trec_io import Qrels, Run, write_qrels  # noqa: E402
from services.lib.common import canonical_json  # noqa: E402
from services.retrieval.corpus import Document, write_corpus, write_queries  # noqa: E402
from services.tensor_store import Checkpoint  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def make_checkpoint() -> Callable[..., Checkpoint]:
    """Factory for random checkpoints with a fixed layout per ``layout_seed``."""

    def factory(seed: int, dtype=np.float32, n_tensors: int = 3, layout_seed: int = 0,
                metadata: Dict[str, str] = None, low: float = -1.0, high: float = 1.0) -> Checkpoint:
        layout = np.random.default_rng(layout_seed)
        values = np.random.default_rng(seed)
        arrays = {}
        for i in range(n_tensors):
            ndim = int(layout.integers(0, 3))
            shape = tuple(int(d) for d in layout.integers(1, 6, size=ndim))
            arrays[f"layer{i}.weight"] = np.asarray(values.uniform(low, high, size=shape), dtype=dtype)
        return Checkpoint.from_arrays(arrays, metadata)

    return factory


@pytest.fixture
def three_docs():
    """cat/dog corpus with hand-checked BM25 statistics."""
    return [
        Document("d1", "", "cat sat"),
        Document("d2", "", "cat cat ran"),
        Document("d3", "", "dog ran"),
    ]


@pytest.fixture
def toy_files(tmp_path, three_docs):
    """Corpus, queries and qrels of the cat/dog collection on disk."""
    paths = {
        "corpus": tmp_path / "corpus.jsonl",
        "queries": tmp_path / "queries.jsonl",
        "qrels": tmp_path / "qrels.txt",
    }
    write_corpus(three_docs, paths["corpus"])
    write_queries({"q1": "cat", "q2": "ran dog"}, paths["queries"])
    write_qrels(Qrels({"q1": {"d1": 1, "d2": 2}, "q2": {"d3": 1}}), paths["qrels"])
    return paths


@pytest.fixture
def simple_run() -> Run:
    return Run({"q1": [("d2", 3.0), ("d3", 2.0), ("d1", 1.0)]}, tag="simple")


GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", default=False,
                     help="Re-record the seeded reference values under tests/golden/")


def flatten(data: Any, prefix: str = "") -> Dict[str, Any]:
    """Nested dicts and lists as one {"a.b.0": leaf} mapping."""
    if isinstance(data, dict):
        items = data.items()
    elif isinstance(data, (list, tuple)):
        items = enumerate(data)
    else:
        return {prefix: data}
    flat: Dict[str, Any] = {}
    for key, value in items:
        flat.update(flatten(value, f"{prefix}.{key}" if prefix else str(key)))
    return flat


@pytest.fixture
def golden(request) -> Callable[..., None]:
    """Compare values of a seeded run with the copy recorded in tests/golden/.

    The first run (or ``--update-golden``) records the values and skips.
    """
    update = request.config.getoption("--update-golden", default=False)

    def check(name: str, data: Any, rel: float = 1e-6, abs_tol: float = 1e-9) -> None:
        path = GOLDEN_DIR / f"{name}.json"
        if update or not path.exists():
            GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
            path.write_text(canonical_json(data), encoding="utf-8")
            pytest.skip(f"recorded reference values in {path.name}")
        expected = flatten(json.loads(path.read_text(encoding="utf-8")))
        actual = flatten(json.loads(canonical_json(data)))
        assert sorted(actual) == sorted(expected)
        for key, value in expected.items():
            if isinstance(value, float):
                assert actual[key] == pytest.approx(value, rel=rel, abs=abs_tol), key
            else:
                assert actual[key] == value, key

    return check
