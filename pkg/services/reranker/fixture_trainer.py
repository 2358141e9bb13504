"""
Deterministic trainer producing toy (pretrained, domain, ir) checkpoints.

Objective over a batch of B text pairs (q_i, p_i), with unit encodings z:

    L = -1/B * sum_i z_qi . z_pi  +  1/(B(B-1)) * sum_{i != j} z_qi . z_pj

i.e. minus the mean positive score plus the mean in-batch negative score.
Plain full-batch gradient descent on float64 shadow weights; every phase
stores float32 weights and the next phase starts from the stored values.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from services.lib.common import canonical_json
from services.lib.constants import Role
from services.lib.exceptions import ConfigError, MissingInputError
from services.lib.logger import PerformanceLogger, get_logger
from services.reranker.bi_encoder import ToyBiEncoder, save_bi_encoder
from services.retrieval.tokenizer import tokenize

logger = get_logger("reranker.fixture_trainer")

TextPair = Tuple[str, str]


class FixtureConfig(BaseModel):
    """Toy model size, training pairs and optimisation schedule."""
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(default=8, ge=1)
    vocab: List[str] = Field(min_length=1)
    general_pairs: List[TextPair] = Field(min_length=1)
    domain_pairs: List[TextPair] = Field(min_length=1)
    retrieval_pairs: List[TextPair] = Field(min_length=1)
    pretrain_steps: int = Field(default=40, ge=0)
    domain_steps: int = Field(default=40, ge=0)
    ir_steps: int = Field(default=80, ge=0)
    learning_rate: float = Field(default=0.5, gt=0.0)
    init_scale: float = Field(default=0.1, gt=0.0)
    ascii_fold: bool = False

    @field_validator("vocab")
    @classmethod
    def _unique_vocab(cls, value: List[str]) -> List[str]:
        if len(set(value)) != len(value):
            raise ValueError("vocabulary terms must be unique")
        return value


def load_fixture_config(path: Union[str, Path]) -> FixtureConfig:
    """Read a fixture config from YAML or JSON."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingInputError(f"Fixture config not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML/JSON: {e}")
    try:
        return FixtureConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid fixture config: {e}")


def bag_matrix(texts: Sequence[str], vocab: Sequence[str], ascii_fold: bool = False) -> np.ndarray:
    """Row i holds term counts of text i divided by its in-vocab length."""
    index = {term: row for row, term in enumerate(vocab)}
    matrix = np.zeros((len(texts), len(vocab)), dtype=np.float64)
    for i, text in enumerate(texts):
        ids = [index[t] for t in tokenize(text, ascii_fold=ascii_fold) if t in index]
        for row in ids:
            matrix[i, row] += 1.0
        if ids:
            matrix[i] /= len(ids)
    return matrix


def pair_weights(batch_size: int) -> np.ndarray:
    if batch_size == 1:
        return np.array([[-1.0]])
    weights = np.full((batch_size, batch_size), 1.0 / (batch_size * (batch_size - 1)))
    np.fill_diagonal(weights, -1.0 / batch_size)
    return weights


def _normalize_rows(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(u, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    z = np.where(norms[:, None] > 0.0, u / safe[:, None], 0.0)
    return z, norms


def _normalize_backward(grad_z: np.ndarray, z: np.ndarray, norms: np.ndarray) -> np.ndarray:
    radial = np.sum(grad_z * z, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms[:, None] > 0.0, (grad_z - radial * z) / safe[:, None], 0.0)


def contrastive_loss(embedding: np.ndarray, projection: np.ndarray,
                     bags_q: np.ndarray, bags_p: np.ndarray) -> float:
    zq, _ = _normalize_rows(bags_q @ embedding @ projection)
    zp, _ = _normalize_rows(bags_p @ embedding @ projection)
    return float(np.sum(pair_weights(len(bags_q)) * (zq @ zp.T)))


def contrastive_gradient(embedding: np.ndarray, projection: np.ndarray,
                         bags_q: np.ndarray, bags_p: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Loss and its analytic gradient with respect to (embedding, projection)."""
    weights = pair_weights(len(bags_q))
    means_q = bags_q @ embedding
    means_p = bags_p @ embedding
    zq, norms_q = _normalize_rows(means_q @ projection)
    zp, norms_p = _normalize_rows(means_p @ projection)
    loss = float(np.sum(weights * (zq @ zp.T)))

    grad_uq = _normalize_backward(weights @ zp, zq, norms_q)
    grad_up = _normalize_backward(weights.T @ zq, zp, norms_p)

    grad_projection = means_q.T @ grad_uq + means_p.T @ grad_up
    grad_embedding = bags_q.T @ (grad_uq @ projection.T) + bags_p.T @ (grad_up @ projection.T)
    return loss, grad_embedding, grad_projection


@dataclass
class FixtureTriple:
    pretrained: ToyBiEncoder
    domain: ToyBiEncoder
    ir: ToyBiEncoder
    losses: Dict[str, List[float]] = field(default_factory=dict)


def _train_phase(name: str, start: ToyBiEncoder, pairs: Sequence[TextPair], steps: int,
                 learning_rate: float) -> Tuple[ToyBiEncoder, List[float]]:
    bags_q = bag_matrix([q for q, _ in pairs], start.vocab, start.ascii_fold)
    bags_p = bag_matrix([p for _, p in pairs], start.vocab, start.ascii_fold)
    embedding = start.embedding.astype(np.float64)
    projection = start.projection.astype(np.float64)

    # loss before every step, then after the last one
    history: List[float] = []
    for _ in range(steps):
        loss, grad_e, grad_p = contrastive_gradient(embedding, projection, bags_q, bags_p)
        history.append(loss)
        embedding = embedding - learning_rate * grad_e
        projection = projection - learning_rate * grad_p
    history.append(contrastive_loss(embedding, projection, bags_q, bags_p))

    logger.info(f"Trained {name} phase", steps=steps, pairs=len(pairs),
                loss_start=round(history[0], 6), loss_end=round(history[-1], 6))
    trained = ToyBiEncoder(vocab=start.vocab, embedding=embedding.astype(np.float32),
                           projection=projection.astype(np.float32), ascii_fold=start.ascii_fold)
    return trained, history


def initial_model(seed: int, config: FixtureConfig) -> ToyBiEncoder:
    rng = np.random.default_rng(seed)
    vocab_size, dim = len(config.vocab), config.dim
    embedding = rng.normal(0.0, config.init_scale, size=(vocab_size, dim))
    projection = np.eye(dim) + rng.normal(0.0, config.init_scale, size=(dim, dim))
    return ToyBiEncoder(vocab=config.vocab, embedding=embedding.astype(np.float32),
                        projection=projection.astype(np.float32), ascii_fold=config.ascii_fold)


def train_fixture(seed: int, config: FixtureConfig) -> FixtureTriple:
    """Pretrain on general pairs, then fine-tune two copies (domain, ir)."""
    perf = PerformanceLogger("reranker.fixture_trainer")
    perf.start_operation("train_fixture", seed=seed)

    init = initial_model(seed, config)
    lr = config.learning_rate
    pretrained, pre_loss = _train_phase("pretrain", init, config.general_pairs, config.pretrain_steps, lr)
    domain, dom_loss = _train_phase("domain", pretrained, config.domain_pairs, config.domain_steps, lr)
    ir, ir_loss = _train_phase("ir", pretrained, config.retrieval_pairs, config.ir_steps, lr)

    perf.end_operation()
    return FixtureTriple(pretrained=pretrained, domain=domain, ir=ir,
                         losses={"pretrain": pre_loss, "domain": dom_loss, "ir": ir_loss})


def write_fixture(triple: FixtureTriple, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write the three checkpoints, a shared vocab sidecar and the loss log."""
    out_dir = Path(out_dir)
    paths = {
        Role.PRETRAINED.value: out_dir / "pretrained.safetensors",
        Role.DOMAIN.value: out_dir / "domain.safetensors",
        Role.IR.value: out_dir / "ir.safetensors",
    }
    vocab_path = out_dir / "vocab.json"
    for role, model in ((Role.PRETRAINED, triple.pretrained), (Role.DOMAIN, triple.domain), (Role.IR, triple.ir)):
        save_bi_encoder(model, paths[role.value], vocab_path=vocab_path, role=role)
    (out_dir / "losses.json").write_text(canonical_json(triple.losses), encoding="utf-8")
    paths["vocab"] = vocab_path
    return paths
