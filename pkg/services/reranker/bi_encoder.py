"""
Toy bi-encoder whose weights live in the tensor container.

    u = mean(embedding[in-vocab terms]) @ projection
    encode(text) = u / |u|        (zero vector when nothing is in vocab)

Weights are stored as ``embedding.weight`` [V x d] and
``projection.weight`` [d x d]; the vocabulary is a JSON array sidecar.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from services.lib.constants import EMBEDDING_TENSOR, PROJECTION_TENSOR, VOCAB_SIDECAR, Role
from services.lib.exceptions import DataFormatError, InvariantViolation, MissingInputError
from services.lib.logger import get_logger
from services.retrieval.corpus import Document
from services.retrieval.tokenizer import tokenize
from services.tensor_store import Checkpoint, read_checkpoint, write_checkpoint

logger = get_logger("reranker.bi_encoder")


@dataclass(frozen=True)
class ToyBiEncoder:
    vocab: Sequence[str]
    embedding: np.ndarray
    projection: np.ndarray
    ascii_fold: bool = False
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        vocab = tuple(self.vocab)
        object.__setattr__(self, "vocab", vocab)
        if not vocab:
            raise InvariantViolation("Vocabulary must hold at least one term")
        if len(set(vocab)) != len(vocab):
            raise InvariantViolation("Vocabulary terms must be unique")
        if self.embedding.ndim != 2 or self.embedding.shape[0] != len(vocab) or self.embedding.shape[1] < 1:
            raise InvariantViolation(
                f"embedding must be [V x d] with V={len(vocab)}, got {list(self.embedding.shape)}"
            )
        d = self.embedding.shape[1]
        if self.projection.shape != (d, d):
            raise InvariantViolation(f"projection must be [{d} x {d}], got {list(self.projection.shape)}")
        object.__setattr__(self, "_index", {term: row for row, term in enumerate(vocab)})

    @property
    def dim(self) -> int:
        return int(self.embedding.shape[1])

    def term_ids(self, text: str) -> List[int]:
        """Row ids of in-vocabulary tokens, repeats kept."""
        return [self._index[t] for t in tokenize(text, ascii_fold=self.ascii_fold) if t in self._index]

    def encode(self, text: str) -> np.ndarray:
        ids = self.term_ids(text)
        if not ids:
            return np.zeros(self.dim, dtype=np.float64)
        mean = self.embedding[ids].astype(np.float64).mean(axis=0)
        u = mean @ self.projection.astype(np.float64)
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            return np.zeros(self.dim, dtype=np.float64)
        return u / norm

    def score_pair(self, query: str, doc: Document) -> float:
        return float(self.encode(query) @ self.encode(doc.indexed_text))

    def to_checkpoint(self, role: Optional[Role] = None) -> Checkpoint:
        metadata = {"vocab_size": str(len(self.vocab)), "dim": str(self.dim)}
        if role is not None:
            metadata["role"] = Role(role).value
        return Checkpoint.from_arrays({
            EMBEDDING_TENSOR: self.embedding.astype(np.float32),
            PROJECTION_TENSOR: self.projection.astype(np.float32),
        }, metadata)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, vocab: Sequence[str], ascii_fold: bool = False) -> 'ToyBiEncoder':
        for name in (EMBEDDING_TENSOR, PROJECTION_TENSOR):
            if name not in ckpt:
                raise DataFormatError(f"Checkpoint lacks tensor {name!r}")
            if not ckpt[name].is_float:
                raise DataFormatError(f"Tensor {name!r} must be floating point")
        try:
            return cls(vocab=vocab, embedding=ckpt.array(EMBEDDING_TENSOR),
                       projection=ckpt.array(PROJECTION_TENSOR), ascii_fold=ascii_fold)
        except InvariantViolation as e:
            raise DataFormatError(f"Checkpoint does not describe a bi-encoder: {e.message}")


def encode(model: ToyBiEncoder, text: str) -> np.ndarray:
    return model.encode(text)


def score_pair(model: ToyBiEncoder, query: str, doc: Document) -> float:
    return model.score_pair(query, doc)


def vocab_path_for(weights_path: Union[str, Path]) -> Path:
    return Path(weights_path).parent / VOCAB_SIDECAR


def read_vocab(path: Union[str, Path]) -> List[str]:
    path = Path(path)
    try:
        vocab = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingInputError(f"Vocabulary not found: {path}")
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: vocabulary is not valid JSON ({e.msg})")
    if not isinstance(vocab, list) or not all(isinstance(t, str) for t in vocab):
        raise DataFormatError(f"{path}: vocabulary must be a JSON array of strings")
    return vocab


def write_vocab(vocab: Sequence[str], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(list(vocab), ensure_ascii=False, indent=0) + "\n", encoding="utf-8")


def save_bi_encoder(model: ToyBiEncoder, path: Union[str, Path], vocab_path: Optional[Union[str, Path]] = None,
                    role: Optional[Role] = None) -> None:
    write_checkpoint(model.to_checkpoint(role), path)
    write_vocab(model.vocab, vocab_path or vocab_path_for(path))


def load_bi_encoder(path: Union[str, Path], vocab_path: Optional[Union[str, Path]] = None,
                    ascii_fold: bool = False) -> ToyBiEncoder:
    ckpt = read_checkpoint(path)
    vocab = read_vocab(vocab_path or vocab_path_for(path))
    model = ToyBiEncoder.from_checkpoint(ckpt, vocab, ascii_fold=ascii_fold)
    logger.debug(f"Loaded bi-encoder {path}", vocab=len(vocab), dim=model.dim, role=ckpt.role)
    return model
