"""
TREC run and qrels handling.

Run files use the 6-column layout ``qid Q0 docid rank score tag``.
Qrels accept the 4-column ``qid iter docid rel`` layout and the BEIR
3-column TSV ``qid<TAB>docid<TAB>rel`` (with or without a header line).
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

import numpy as np

from services.lib.exceptions import DataFormatError, InvariantViolation, MissingInputError, UsageError
from services.lib.logger import get_logger

logger = get_logger("evaluation.trec_io")

Ranking = List[Tuple[str, float]]


def rank_pairs(pairs: Iterable[Tuple[str, float]]) -> Ranking:
    """Canonical order: score descending, then doc_id descending."""
    return sorted(((str(d), float(s)) for d, s in pairs), key=lambda p: (p[1], p[0]), reverse=True)


@dataclass
class Run:
    """Per-query ranked lists; each list is kept in canonical order."""
    rankings: Dict[str, Ranking] = field(default_factory=dict)
    tag: str = "taskfuse"

    def __post_init__(self) -> None:
        ordered: Dict[str, Ranking] = {}
        for qid in sorted(self.rankings):
            pairs = self.rankings[qid]
            doc_ids = [doc_id for doc_id, _ in pairs]
            if len(set(doc_ids)) != len(doc_ids):
                raise InvariantViolation(f"Run {self.tag!r}: duplicate doc_id within query {qid!r}")
            ordered[qid] = rank_pairs(pairs)
        self.rankings = ordered

    def query_ids(self) -> List[str]:
        return list(self.rankings)

    def __contains__(self, qid: object) -> bool:
        return qid in self.rankings

    def __len__(self) -> int:
        return len(self.rankings)

    def doc_ids(self, qid: str) -> List[str]:
        return [doc_id for doc_id, _ in self.rankings.get(qid, [])]

    def scores(self, qid: str) -> Dict[str, float]:
        return dict(self.rankings.get(qid, []))

    def truncate(self, k: int) -> 'Run':
        return Run({qid: pairs[:k] for qid, pairs in self.rankings.items()}, tag=self.tag)


@dataclass
class Qrels:
    """Graded relevance judgments: query_id -> doc_id -> grade (>= 0)."""
    judgments: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.judgments = {q: dict(sorted(docs.items())) for q, docs in sorted(self.judgments.items())}

    def query_ids(self) -> List[str]:
        return list(self.judgments)

    def grades(self, qid: str) -> Dict[str, int]:
        return self.judgments.get(qid, {})

    def relevant(self, qid: str) -> Set[str]:
        return {doc for doc, grade in self.grades(qid).items() if grade > 0}

    def judged_queries(self) -> List[str]:
        """Queries with at least one relevant document."""
        return [q for q in self.judgments if self.relevant(q)]

    def subset(self, query_ids: Iterable[str]) -> 'Qrels':
        wanted = set(query_ids)
        return Qrels({q: d for q, d in self.judgments.items() if q in wanted})


def _open_lines(path: Union[str, Path]) -> List[str]:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise MissingInputError(f"File not found: {path}")


def read_run(path: Union[str, Path]) -> Run:
    """Parse a 6-column TREC run file."""
    rankings: Dict[str, Dict[str, float]] = {}
    tag: Optional[str] = None
    for lineno, line in enumerate(_open_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DataFormatError(f"{path}:{lineno}: expected 6 columns, found {len(parts)}")
        qid, _, doc_id, _, raw_score, run_tag = parts
        try:
            score = float(raw_score)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: score {raw_score!r} is not a number")
        if not math.isfinite(score):
            raise DataFormatError(f"{path}:{lineno}: score {raw_score!r} is not finite")
        docs = rankings.setdefault(qid, {})
        if doc_id in docs:
            raise DataFormatError(f"{path}:{lineno}: duplicate doc {doc_id!r} for query {qid!r}")
        docs[doc_id] = score
        tag = tag or run_tag
    return Run({q: list(docs.items()) for q, docs in rankings.items()}, tag=tag or "taskfuse")


def write_run(run: Run, path: Union[str, Path], tag: Optional[str] = None) -> None:
    """Write a run; scores use repr() so the file re-reads to identical floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    run_tag = (tag or run.tag).replace(" ", "_") or "taskfuse"
    lines = []
    for qid, pairs in run.rankings.items():
        for rank, (doc_id, score) in enumerate(pairs, start=1):
            lines.append(f"{qid} Q0 {doc_id} {rank} {score!r} {run_tag}")
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_qrels(path: Union[str, Path]) -> Qrels:
    """Parse qrels in 4-column TREC or 3-column TSV form; negative grades become 0."""
    judgments: Dict[str, Dict[str, int]] = {}
    clamped = 0
    for lineno, line in enumerate(_open_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) == 4:
            qid, _, doc_id, raw_grade = parts
        elif len(parts) == 3:
            qid, doc_id, raw_grade = parts
        else:
            raise DataFormatError(f"{path}:{lineno}: expected 3 or 4 columns, found {len(parts)}")
        try:
            grade = int(raw_grade)
        except ValueError:
            if lineno == 1:
                continue  # header
            raise DataFormatError(f"{path}:{lineno}: relevance {raw_grade!r} is not an integer")
        if grade < 0:
            clamped += 1
            grade = 0
        judgments.setdefault(qid, {})[doc_id] = grade

    if clamped:
        logger.warning(f"Clamped {clamped} negative relevance grades to 0", path=str(path))
    if not judgments:
        raise DataFormatError(f"{path}: qrels contain no judgments")
    return Qrels(judgments)


def write_qrels(qrels: Qrels, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{qid} 0 {doc_id} {grade}"
             for qid, docs in qrels.judgments.items() for doc_id, grade in docs.items()]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def split_queries(qrels: Qrels, fraction: float = 0.2, seed: int = 0) -> Tuple[Qrels, Qrels]:
    """Seeded split of judged queries into (development, remainder)."""
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"Development fraction must lie in (0, 1), got {fraction}")
    judged = qrels.judged_queries()
    if len(judged) < 2:
        raise UsageError("Need at least two judged queries to split")

    n_dev = min(len(judged) - 1, max(1, int(round(fraction * len(judged)))))
    order = np.random.default_rng(seed).permutation(len(judged))
    dev_ids = sorted(judged[i] for i in order[:n_dev])
    rest_ids = sorted(set(qrels.query_ids()) - set(dev_ids))
    logger.info("Split development queries", dev=len(dev_ids), remainder=len(rest_ids), seed=seed)
    return qrels.subset(dev_ids), qrels.subset(rest_ids)
