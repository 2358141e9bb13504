"""
Second-stage scorers and candidate re-ranking.

A scorer rates every candidate of one query. Two implementations:
the toy bi-encoder, and an external score table (TSV
``query_id<TAB>doc_id<TAB>score``) carrying real model outputs.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from services.evaluation.trec_io import Run
from services.lib.common import ordered_map
from services.lib.exceptions import (
    DataFormatError,
    MissingInputError,
    MissingScoreError,
    UnknownQueryError,
    UsageError,
)
from services.lib.logger import get_logger
from services.reranker.bi_encoder import ToyBiEncoder
from services.retrieval.corpus import Document

logger = get_logger("reranker.scorers")


@dataclass(frozen=True)
class ScoredPair:
    query_id: str
    doc_id: str
    score: float


class Scorer(Protocol):
    name: str

    def score_candidates(self, query_id: str, query_text: Optional[str],
                         doc_ids: Sequence[str]) -> List[float]:
        ...


class BiEncoderScorer:
    """Cosine scores from a ToyBiEncoder; document encodings are cached."""

    def __init__(self, model: ToyBiEncoder, corpus: Mapping[str, Document], name: str = "bi-encoder"):
        self.model = model
        self.corpus = corpus
        self.name = name
        self._doc_cache: Dict[str, object] = {}

    def _doc_vector(self, doc_id: str):
        vector = self._doc_cache.get(doc_id)
        if vector is None:
            doc = self.corpus.get(doc_id)
            if doc is None:
                raise MissingInputError(f"Candidate {doc_id!r} is not in the corpus")
            vector = self.model.encode(doc.indexed_text)
            self._doc_cache[doc_id] = vector
        return vector

    def score_candidates(self, query_id: str, query_text: Optional[str],
                         doc_ids: Sequence[str]) -> List[float]:
        if query_text is None:
            raise UnknownQueryError(f"No text for query {query_id!r}")
        q = self.model.encode(query_text)
        return [float(q @ self._doc_vector(doc_id)) for doc_id in doc_ids]


class ExternalScoreTable:
    """Pre-computed (query_id, doc_id) -> score; missing pairs are errors."""

    def __init__(self, scores: Mapping[Tuple[str, str], float], name: str = "external"):
        self.scores = dict(scores)
        self.name = name
        self._queries = {qid for qid, _ in self.scores}

    def score_candidates(self, query_id: str, query_text: Optional[str],
                         doc_ids: Sequence[str]) -> List[float]:
        if query_id not in self._queries:
            raise UnknownQueryError(f"Score table {self.name!r} has no scores for query {query_id!r}")
        missing = [d for d in doc_ids if (query_id, d) not in self.scores]
        if missing:
            raise MissingScoreError(
                f"Score table {self.name!r} lacks {len(missing)} candidates of query {query_id!r}: "
                f"{', '.join(sorted(missing)[:5])}"
            )
        return [self.scores[(query_id, d)] for d in doc_ids]

    def pairs(self) -> List[ScoredPair]:
        return [ScoredPair(q, d, s) for (q, d), s in sorted(self.scores.items())]


def read_scores(path: Union[str, Path]) -> ExternalScoreTable:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise MissingInputError(f"Score table not found: {path}")

    scores: Dict[Tuple[str, str], float] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"{path}:{lineno}: expected query_id, doc_id and score separated by tabs")
        qid, doc_id, raw = (p.strip() for p in parts)
        try:
            score = float(raw)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: score {raw!r} is not a number")
        if not math.isfinite(score):
            raise DataFormatError(f"{path}:{lineno}: score {raw!r} is not finite")
        if (qid, doc_id) in scores:
            raise DataFormatError(f"{path}:{lineno}: duplicate pair ({qid}, {doc_id})")
        scores[(qid, doc_id)] = score
    return ExternalScoreTable(scores, name=path.name)


def write_scores(pairs: Iterable[ScoredPair], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(pairs, key=lambda p: (p.query_id, p.doc_id))
    path.write_text("".join(f"{p.query_id}\t{p.doc_id}\t{p.score!r}\n" for p in ordered), encoding="utf-8")


def run_to_pairs(run: Run) -> List[ScoredPair]:
    return [ScoredPair(qid, doc_id, score) for qid, ranking in run.rankings.items() for doc_id, score in ranking]


def rerank(scorer: Scorer, run_in: Run, queries: Optional[Mapping[str, str]] = None,
           k: Optional[int] = None, workers: int = 1, tag: Optional[str] = None) -> Run:
    """Rescore every candidate of ``run_in`` and keep the top ``k`` per query."""
    if k is not None and k < 1:
        raise UsageError(f"k must be >= 1, got {k}")

    qids = run_in.query_ids()
    if queries is not None:
        unknown = [q for q in qids if q not in queries]
        if unknown:
            raise UnknownQueryError(f"Run holds queries without text: {', '.join(unknown[:5])}")

    def rescore(qid: str) -> List[Tuple[str, float]]:
        doc_ids = run_in.doc_ids(qid)
        text = queries.get(qid) if queries is not None else None
        scores = scorer.score_candidates(qid, text, doc_ids)
        return list(zip(doc_ids, scores))

    results = ordered_map(rescore, qids, workers=workers)
    reranked = Run(dict(zip(qids, results)), tag=tag or scorer.name)
    if k is not None:
        reranked = reranked.truncate(k)
    logger.info("Re-ranked candidates", scorer=scorer.name, queries=len(qids))
    return reranked
