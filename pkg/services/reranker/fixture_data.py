"""
Seeded synthetic collection for end-to-end runs of the toy pipeline.

Documents are drawn from a handful of topics, each with its own word
list, mixed with shared general words. The first topics form the target
domain: evaluation and development queries are drawn from them, and the
domain training pairs come from their documents.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Set, Tuple, Union

import numpy as np

from services.evaluation.trec_io import Qrels, write_qrels
from services.lib.common import canonical_json
from services.lib.logger import get_logger
from services.reranker.fixture_trainer import FixtureConfig
from services.retrieval.corpus import Document, write_corpus, write_queries
from services.retrieval.tokenizer import tokenize

logger = get_logger("reranker.fixture_data")

CONSONANTS = "bcdfghklmnprstvz"
VOWELS = "aeiou"

TOPICS = 5
DOMAIN_TOPICS = (0, 1)
WORDS_PER_TOPIC = 24
GENERAL_WORDS = 60
DOCS_PER_TOPIC = 30
EVAL_QUERIES = 12
DEV_QUERIES = 5
DEV_SET_NAMES = ("dev-a", "dev-b")
PAIRS_PER_KIND = 40


@dataclass
class ToyCollection:
    documents: List[Document]
    queries: Dict[str, str]
    qrels: Qrels
    dev_sets: Dict[str, Tuple[Dict[str, str], Qrels]]
    fixture_config: FixtureConfig
    topics: Dict[str, int] = field(default_factory=dict)


def _make_words(rng: np.random.Generator, count: int, taken: Set[str]) -> List[str]:
    words: List[str] = []
    while len(words) < count:
        syllables = int(rng.integers(2, 4))
        word = "".join(CONSONANTS[int(rng.integers(len(CONSONANTS)))] + VOWELS[int(rng.integers(len(VOWELS)))]
                       for _ in range(syllables))
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


def _pick(rng: np.random.Generator, words: List[str], n: int) -> List[str]:
    return [words[int(i)] for i in rng.integers(len(words), size=n)]


def _make_queries(rng: np.random.Generator, prefix: str, count: int, documents: List[Document],
                  doc_topics: Dict[str, int], topic_words: List[List[str]]) -> Tuple[Dict[str, str], Qrels]:
    queries: Dict[str, str] = {}
    judgments: Dict[str, Dict[str, int]] = {}
    domain_docs = [d for d in documents if doc_topics[d.doc_id] in DOMAIN_TOPICS]
    for n in range(count):
        qid = f"{prefix}{n:02d}"
        anchor = domain_docs[int(rng.integers(len(domain_docs)))]
        topic = doc_topics[anchor.doc_id]
        vocabulary = set(topic_words[topic])
        own = [t for t in dict.fromkeys(tokenize(anchor.indexed_text)) if t in vocabulary]
        chosen = [own[int(i)] for i in rng.permutation(len(own))[:3]]
        terms = set(chosen)
        queries[qid] = " ".join(chosen)

        grades: Dict[str, int] = {}
        for doc in documents:
            overlap = len(terms & set(tokenize(doc.indexed_text)))
            if not overlap:
                continue
            if doc_topics[doc.doc_id] == topic:
                grades[doc.doc_id] = 2 if overlap >= 2 else 1
            else:
                grades[doc.doc_id] = 0
        judgments[qid] = grades
    return queries, Qrels(judgments)


def generate_toy_collection(seed: int = 0) -> ToyCollection:
    """Deterministic corpus, queries, graded qrels, dev sets and training pairs."""
    rng = np.random.default_rng(seed)
    taken: Set[str] = set()
    topic_words = [_make_words(rng, WORDS_PER_TOPIC, taken) for _ in range(TOPICS)]
    general_words = _make_words(rng, GENERAL_WORDS, taken)

    documents: List[Document] = []
    doc_topics: Dict[str, int] = {}
    for topic in range(TOPICS):
        for _ in range(DOCS_PER_TOPIC):
            doc_id = f"doc{len(documents):03d}"
            length = int(rng.integers(10, 21))
            tokens: List[str] = []
            for _ in range(length):
                pool = topic_words[topic] if rng.random() < 0.6 else general_words
                tokens.append(pool[int(rng.integers(len(pool)))])
            title = " ".join(_pick(rng, topic_words[topic], 3))
            documents.append(Document(doc_id=doc_id, title=title, text=" ".join(tokens)))
            doc_topics[doc_id] = topic

    queries, qrels = _make_queries(rng, "q", EVAL_QUERIES, documents, doc_topics, topic_words)
    dev_sets = {name: _make_queries(rng, f"{name}-q", DEV_QUERIES, documents, doc_topics, topic_words)
                for name in DEV_SET_NAMES}

    general_pairs = []
    for _ in range(PAIRS_PER_KIND):
        tokens = tokenize(documents[int(rng.integers(len(documents)))].text)
        half = len(tokens) // 2
        general_pairs.append((" ".join(tokens[:half]), " ".join(tokens[half:])))

    domain_docs = [d for d in documents if doc_topics[d.doc_id] in DOMAIN_TOPICS]
    order = rng.permutation(len(domain_docs))[:PAIRS_PER_KIND]
    domain_pairs = [(domain_docs[int(i)].title, domain_docs[int(i)].text) for i in order]

    retrieval_pairs = []
    for _ in range(PAIRS_PER_KIND):
        doc = documents[int(rng.integers(len(documents)))]
        tokens = tokenize(doc.indexed_text)
        retrieval_pairs.append((" ".join(_pick(rng, tokens, 3)), doc.indexed_text))

    vocab = [w for words in topic_words for w in words] + general_words
    config = FixtureConfig(vocab=vocab, general_pairs=general_pairs, domain_pairs=domain_pairs,
                           retrieval_pairs=retrieval_pairs)
    logger.info("Generated toy collection", seed=seed, documents=len(documents), queries=len(queries),
                vocab=len(vocab))
    return ToyCollection(documents=documents, queries=queries, qrels=qrels, dev_sets=dev_sets,
                         fixture_config=config, topics=doc_topics)


def experiment_template(collection: ToyCollection) -> Dict[str, object]:
    """Experiment config wired to the files written by write_toy_collection."""
    return {
        "checkpoints": {
            "pretrained": "checkpoints/pretrained.safetensors",
            "domain": "checkpoints/domain.safetensors",
            "ir": "checkpoints/ir.safetensors",
            "vocab": "checkpoints/vocab.json",
        },
        "evaluation": {"corpus": "corpus.jsonl", "queries": "queries.jsonl", "qrels": "qrels.txt"},
        "sweep": {
            "enabled": True,
            "dev_sets": [
                {"name": name, "corpus": "corpus.jsonl", "queries": f"dev/{name}/queries.jsonl",
                 "qrels": f"dev/{name}/qrels.txt"}
                for name in collection.dev_sets
            ],
        },
        "output_dir": "output",
        "seed": 0,
    }


def write_toy_collection(collection: ToyCollection, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "corpus": out_dir / "corpus.jsonl",
        "queries": out_dir / "queries.jsonl",
        "qrels": out_dir / "qrels.txt",
        "training": out_dir / "training.json",
        "experiment": out_dir / "experiment.json",
    }
    write_corpus(collection.documents, paths["corpus"])
    write_queries(collection.queries, paths["queries"])
    write_qrels(collection.qrels, paths["qrels"])
    for name, (queries, qrels) in collection.dev_sets.items():
        write_queries(queries, out_dir / "dev" / name / "queries.jsonl")
        write_qrels(qrels, out_dir / "dev" / name / "qrels.txt")
    paths["training"].write_text(canonical_json(collection.fixture_config.model_dump(mode="json")),
                                 encoding="utf-8")
    paths["experiment"].write_text(canonical_json(experiment_template(collection)), encoding="utf-8")
    return paths
