"""
System-wide constants and enums for taskfuse.
"""

from enum import Enum


class Role(str, Enum):
    """Provenance role recorded in checkpoint metadata."""
    PRETRAINED = "pretrained"
    DOMAIN = "domain"
    IR = "ir"
    MERGED = "merged"
    TASK_VECTOR = "task_vector"


class MismatchPolicy(str, Enum):
    """How to treat tensors that are not present in both inputs."""
    STRICT = "strict"
    SKIP = "skip"
    INTERSECT = "intersect"


class Normalization(str, Enum):
    """Score normalization applied before fusion."""
    NONE = "none"
    MINMAX_PER_QUERY = "minmax_per_query"


class Gain(str, Enum):
    """NDCG gain function."""
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


class FusionSharing(str, Enum):
    """Whether tuned fusion weights are per development set or shared."""
    PER_DATASET = "per_dataset"
    SHARED = "shared"


ROLE_KEY = "role"
ALPHA_KEY = "alpha"
OMITTED_KEY = "omitted_tensors"

# BM25 (Lucene / Anserini convention)
DEFAULT_K1 = 0.9
DEFAULT_B = 0.4
DEFAULT_DEPTH = 100

DEFAULT_LAMBDA_BM25 = 0.5
DEFAULT_LAMBDA_LLM = 0.5
DEFAULT_GRID_STEP = 0.1

DEFAULT_ALPHAS = [round(0.1 * i, 1) for i in range(1, 11)]
DEFAULT_OBJECTIVE = "NDCG@10"
DEFAULT_METRICS = ["P@10", "NDCG@3", "NDCG@10", "MAP@100"]
DEFAULT_FAMILY_ALPHA = 0.01

# Toy bi-encoder tensor names
EMBEDDING_TENSOR = "embedding.weight"
PROJECTION_TENSOR = "projection.weight"
VOCAB_SIDECAR = "vocab.json"

CHECKPOINT_SUFFIX = ".safetensors"
