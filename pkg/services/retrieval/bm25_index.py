"""
In-memory inverted index with Lucene-style BM25.

    idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
    w(t, d)  = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))

Repeated query terms count once. Scores are accumulated term-at-a-time in
query order, identically in search() and bm25_score().
"""

import heapq
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Tuple, Union

from services.evaluation.trec_io import Run
from services.lib.common import canonical_json, ordered_map
from services.lib.constants import DEFAULT_B, DEFAULT_K1
from services.lib.exceptions import (
    DataFormatError,
    DuplicateDocumentError,
    InvariantViolation,
    MissingInputError,
    UsageError,
)
from services.lib.logger import get_logger
from services.retrieval.corpus import Document
from services.retrieval.tokenizer import tokenize

logger = get_logger("retrieval.bm25")

INDEX_FORMAT = "taskfuse-bm25-index"
INDEX_VERSION = 1

Posting = Tuple[int, int]


@dataclass
class InvertedIndex:
    """Postings per term as (doc ordinal, tf), ordinals strictly increasing."""
    postings: Dict[str, List[Posting]] = field(default_factory=dict)
    doc_lengths: List[int] = field(default_factory=list)
    doc_ids: List[str] = field(default_factory=list)
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    ascii_fold: bool = False

    @property
    def N(self) -> int:
        return len(self.doc_ids)

    @property
    def avgdl(self) -> float:
        return sum(self.doc_lengths) / self.N if self.N else 0.0

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))

    def tf(self, term: str, ordinal: int) -> int:
        plist = self.postings.get(term)
        if not plist:
            return 0
        pos = bisect_left(plist, (ordinal, -1))
        if pos < len(plist) and plist[pos][0] == ordinal:
            return plist[pos][1]
        return 0

    def query_terms(self, query: str) -> List[str]:
        """Distinct query terms in first-occurrence order."""
        return list(dict.fromkeys(tokenize(query, ascii_fold=self.ascii_fold)))

    def validate(self) -> None:
        if len(self.doc_lengths) != self.N:
            raise InvariantViolation("doc_lengths and doc_ids differ in size")
        if len(set(self.doc_ids)) != self.N:
            raise InvariantViolation("doc_ids are not unique")
        for term, plist in self.postings.items():
            previous = -1
            for ordinal, tf in plist:
                if ordinal <= previous or not 0 <= ordinal < self.N or tf < 1:
                    raise InvariantViolation(f"Invalid postings list for term {term!r}")
                previous = ordinal


def _term_weight(idf: float, tf: int, doc_length: int, k1: float, b: float, avgdl: float) -> float:
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_length / avgdl))


def build_index(documents: Iterable[Document], k1: float = DEFAULT_K1, b: float = DEFAULT_B,
                ascii_fold: bool = False) -> InvertedIndex:
    """Index title + " " + text of every document, in input order."""
    if k1 < 0 or not 0.0 <= b <= 1.0:
        raise UsageError(f"BM25 parameters out of range: k1={k1}, b={b}")

    postings: Dict[str, List[Posting]] = {}
    doc_lengths: List[int] = []
    doc_ids: List[str] = []
    seen = set()
    for ordinal, doc in enumerate(documents):
        if doc.doc_id in seen:
            raise DuplicateDocumentError(f"Duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        tokens = tokenize(doc.indexed_text, ascii_fold=ascii_fold)
        counts: Dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ordinal, tf))
        doc_lengths.append(len(tokens))
        doc_ids.append(doc.doc_id)

    index = InvertedIndex(postings=postings, doc_lengths=doc_lengths, doc_ids=doc_ids,
                          k1=k1, b=b, ascii_fold=ascii_fold)
    logger.info("Built BM25 index", documents=index.N, terms=len(postings),
                avgdl=round(index.avgdl, 4), k1=k1, b=b)
    return index


def bm25_score(index: InvertedIndex, query_terms: List[str], ordinal: int) -> float:
    if not 0 <= ordinal < index.N:
        raise InvariantViolation(f"Document ordinal {ordinal} outside [0, {index.N})")
    score = 0.0
    avgdl = index.avgdl
    for term in dict.fromkeys(query_terms):
        tf = index.tf(term, ordinal)
        if tf:
            score += _term_weight(index.idf(term), tf, index.doc_lengths[ordinal],
                                  index.k1, index.b, avgdl)
    return score


def search(index: InvertedIndex, query: str, k: int) -> List[Tuple[str, float]]:
    """Top-k (doc_id, score), score descending then doc_id descending."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    avgdl = index.avgdl
    accumulators: Dict[int, float] = {}
    for term in index.query_terms(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for ordinal, tf in plist:
            weight = _term_weight(idf, tf, index.doc_lengths[ordinal], index.k1, index.b, avgdl)
            accumulators[ordinal] = accumulators.get(ordinal, 0.0) + weight

    candidates = ((index.doc_ids[o], s) for o, s in accumulators.items() if s > 0.0)
    return heapq.nlargest(k, candidates, key=lambda pair: (pair[1], pair[0]))


def search_many(index: InvertedIndex, queries: Mapping[str, str], k: int,
                workers: int = 1, tag: str = "bm25") -> Run:
    """Search every query; queries without any hit are left out of the run."""
    qids = sorted(queries)
    results = ordered_map(lambda qid: search(index, queries[qid], k), qids, workers=workers)
    rankings = {qid: hits for qid, hits in zip(qids, results) if hits}
    logger.info("Searched queries", queries=len(qids), with_hits=len(rankings), depth=k)
    return Run(rankings, tag=tag)


def save_index(index: InvertedIndex, path: Union[str, Path]) -> None:
    payload = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "k1": index.k1,
        "b": index.b,
        "ascii_fold": index.ascii_fold,
        "doc_ids": index.doc_ids,
        "doc_lengths": index.doc_lengths,
        "postings": {term: [list(p) for p in plist] for term, plist in index.postings.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(payload), encoding="utf-8")


def load_index(path: Union[str, Path]) -> InvertedIndex:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingInputError(f"Index not found: {path}")
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: index is not valid JSON ({e.msg})")

    if not isinstance(payload, dict) or payload.get("format") != INDEX_FORMAT:
        raise DataFormatError(f"{path}: not a {INDEX_FORMAT} file")
    try:
        index = InvertedIndex(
            postings={t: [(int(o), int(tf)) for o, tf in plist] for t, plist in payload["postings"].items()},
            doc_lengths=[int(n) for n in payload["doc_lengths"]],
            doc_ids=[str(d) for d in payload["doc_ids"]],
            k1=float(payload["k1"]),
            b=float(payload["b"]),
            ascii_fold=bool(payload.get("ascii_fold", False)),
        )
        index.validate()
    except (KeyError, TypeError, ValueError, InvariantViolation) as e:
        raise DataFormatError(f"{path}: malformed index ({e})")
    return index
