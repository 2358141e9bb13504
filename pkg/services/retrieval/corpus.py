"""
BEIR-style JSONL corpus and query files.

Corpus lines: {"_id": str, "title": str, "text": str}
Query lines:  {"_id": str, "text": str}
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Tuple, Union

from services.lib.exceptions import DataFormatError, DuplicateDocumentError, MissingInputError


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str = ""
    text: str = ""

    @property
    def indexed_text(self) -> str:
        """Title and text joined by a single space."""
        return f"{self.title} {self.text}"


def _read_jsonl(path: Union[str, Path]) -> Iterator[Tuple[int, str, Dict[str, Any]]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise MissingInputError(f"File not found: {path}")
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}:{lineno}: invalid JSON ({e.msg})")
        if not isinstance(record, dict):
            raise DataFormatError(f"{path}:{lineno}: expected a JSON object")
        doc_id = record.get("_id")
        if not isinstance(doc_id, str) or not doc_id:
            raise DataFormatError(f"{path}:{lineno}: missing or empty \"_id\"")
        yield lineno, doc_id, record


def _field(record: Mapping[str, Any], key: str, path: Union[str, Path], lineno: int) -> str:
    value = record.get(key) or ""
    if not isinstance(value, str):
        raise DataFormatError(f"{path}:{lineno}: field {key!r} must be a string")
    return value


def read_corpus(path: Union[str, Path]) -> List[Document]:
    documents: List[Document] = []
    seen = set()
    for lineno, doc_id, record in _read_jsonl(path):
        if doc_id in seen:
            raise DuplicateDocumentError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        documents.append(Document(doc_id=doc_id,
                                  title=_field(record, "title", path, lineno),
                                  text=_field(record, "text", path, lineno)))
    return documents


def read_queries(path: Union[str, Path]) -> Dict[str, str]:
    queries: Dict[str, str] = {}
    for lineno, qid, record in _read_jsonl(path):
        if qid in queries:
            raise DataFormatError(f"{path}:{lineno}: duplicate query id {qid!r}")
        queries[qid] = _field(record, "text", path, lineno)
    return queries


def write_corpus(documents: Iterable[Document], path: Union[str, Path]) -> None:
    records = [{"_id": d.doc_id, "title": d.title, "text": d.text} for d in documents]
    _write_jsonl(records, path)


def write_queries(queries: Mapping[str, str], path: Union[str, Path]) -> None:
    _write_jsonl([{"_id": qid, "text": text} for qid, text in queries.items()], path)


def _write_jsonl(records: List[Dict[str, str]], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records),
                    encoding="utf-8")


def corpus_map(documents: Iterable[Document]) -> Dict[str, Document]:
    return {doc.doc_id: doc for doc in documents}
