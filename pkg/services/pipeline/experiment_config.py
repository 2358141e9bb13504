"""
Experiment document: a single JSON file describing one full run.

Relative paths are resolved against the directory holding the file, and
every referenced input must exist when the document is loaded.
"""

import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from services.evaluation.metrics import parse_metric
from services.lib.common import canonical_json, format_alpha
from services.lib.constants import (
    DEFAULT_ALPHAS,
    DEFAULT_B,
    DEFAULT_DEPTH,
    DEFAULT_FAMILY_ALPHA,
    DEFAULT_GRID_STEP,
    DEFAULT_K1,
    DEFAULT_LAMBDA_BM25,
    DEFAULT_LAMBDA_LLM,
    DEFAULT_METRICS,
    DEFAULT_OBJECTIVE,
    FusionSharing,
    Gain,
    MismatchPolicy,
    Normalization,
)
from services.lib.exceptions import ConfigError, DataFormatError, MissingInputError, UsageError


def _resolve(value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
    base = (info.context or {}).get("base_dir")
    if value is None or base is None or value.is_absolute():
        return value
    return Path(base) / value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CheckpointPaths(_Section):
    pretrained: Optional[Path] = None
    domain: Optional[Path] = None
    ir: Optional[Path] = None
    vocab: Optional[Path] = None

    @field_validator("pretrained", "domain", "ir", "vocab")
    @classmethod
    def _paths(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        return _resolve(value, info)


class EvaluationSet(_Section):
    corpus: Path
    queries: Path
    qrels: Path
    first_stage_run: Optional[Path] = None
    fusion_dev_set: Optional[str] = None

    @field_validator("corpus", "queries", "qrels", "first_stage_run")
    @classmethod
    def _paths(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        return _resolve(value, info)


class DevSet(_Section):
    name: str = Field(min_length=1)
    corpus: Path
    queries: Path
    qrels: Path
    first_stage_run: Optional[Path] = None

    @field_validator("corpus", "queries", "qrels", "first_stage_run")
    @classmethod
    def _paths(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        return _resolve(value, info)


class BM25Settings(_Section):
    k1: float = Field(default=DEFAULT_K1, ge=0.0)
    b: float = Field(default=DEFAULT_B, ge=0.0, le=1.0)
    ascii_fold: bool = False


class FusionSettings(_Section):
    lambda_bm25: float = Field(default=DEFAULT_LAMBDA_BM25, ge=0.0, le=1.0)
    lambda_llm: float = Field(default=DEFAULT_LAMBDA_LLM, ge=0.0, le=1.0)
    normalization: Normalization = Normalization.MINMAX_PER_QUERY
    tune: bool = False
    sharing: FusionSharing = FusionSharing.PER_DATASET
    grid_step: float = Field(default=DEFAULT_GRID_STEP, gt=0.0, le=1.0)


class SweepSettings(_Section):
    enabled: bool = True
    alphas: List[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    dev_sets: List[DevSet] = Field(default_factory=list)
    objective_metric: str = DEFAULT_OBJECTIVE
    # alpha -> dev set name -> score table
    score_tables: Dict[str, Dict[str, Path]] = Field(default_factory=dict)

    @field_validator("alphas")
    @classmethod
    def _finite_alphas(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("alphas must not be empty")
        if not all(math.isfinite(a) for a in value):
            raise ValueError("alphas must be finite")
        return value

    @field_validator("objective_metric")
    @classmethod
    def _metric(cls, value: str) -> str:
        return _metric_name(value)

    @field_validator("score_tables")
    @classmethod
    def _tables(cls, value: Dict[str, Dict[str, Path]], info: ValidationInfo) -> Dict[str, Dict[str, Path]]:
        resolved = {}
        for alpha, tables in value.items():
            try:
                key = format_alpha(float(alpha))
            except ValueError:
                raise ValueError(f"score_tables key {alpha!r} is not a number")
            resolved[key] = {name: _resolve(path, info) for name, path in tables.items()}
        return resolved

    @model_validator(mode="after")
    def _dev_sets_required(self) -> 'SweepSettings':
        if self.enabled and not self.dev_sets:
            raise ValueError("an enabled sweep needs at least one dev set")
        names = [d.name for d in self.dev_sets]
        if len(set(names)) != len(names):
            raise ValueError("dev set names must be unique")
        return self

    def table_for(self, alpha: float, dev_set: str) -> Optional[Path]:
        return self.score_tables.get(format_alpha(alpha), {}).get(dev_set)


class SignificanceSettings(_Section):
    metric: str = DEFAULT_OBJECTIVE
    family_alpha: float = Field(default=DEFAULT_FAMILY_ALPHA, gt=0.0, lt=1.0)

    @field_validator("metric")
    @classmethod
    def _metric(cls, value: str) -> str:
        return _metric_name(value)


def _metric_name(value: str) -> str:
    try:
        return parse_metric(value).name
    except UsageError as e:
        raise ValueError(e.message)


class ExperimentConfig(_Section):
    checkpoints: CheckpointPaths = Field(default_factory=CheckpointPaths)
    evaluation: EvaluationSet
    bm25: BM25Settings = Field(default_factory=BM25Settings)
    first_stage_depth: int = Field(default=DEFAULT_DEPTH, ge=1)
    fusion: FusionSettings = Field(default_factory=FusionSettings)
    sweep: SweepSettings = Field(default_factory=lambda: SweepSettings(enabled=False))
    alpha: float = 1.0
    metrics: List[str] = Field(default_factory=lambda: list(DEFAULT_METRICS))
    gain: Gain = Gain.LINEAR
    mismatch_policy: MismatchPolicy = MismatchPolicy.STRICT
    significance: SignificanceSettings = Field(default_factory=SignificanceSettings)
    variant_score_tables: Dict[str, Path] = Field(default_factory=dict)
    output_dir: Path = Field(default=Path("output"), validate_default=True)
    seed: int = 0

    _base_dir: Optional[Path] = PrivateAttr(default=None)

    @field_validator("alpha")
    @classmethod
    def _finite_alpha(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("alpha must be finite")
        return value

    @field_validator("metrics")
    @classmethod
    def _metrics(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("metrics must not be empty")
        return [_metric_name(m) for m in value]

    @field_validator("variant_score_tables")
    @classmethod
    def _variant_tables(cls, value: Dict[str, Path], info: ValidationInfo) -> Dict[str, Path]:
        return {name: _resolve(path, info) for name, path in value.items()}

    @field_validator("output_dir")
    @classmethod
    def _output(cls, value: Path, info: ValidationInfo) -> Path:
        return _resolve(value, info)

    @model_validator(mode="after")
    def _fusion_dev_set_known(self) -> 'ExperimentConfig':
        wanted = self.evaluation.fusion_dev_set
        if wanted is not None and wanted not in {d.name for d in self.sweep.dev_sets}:
            raise ValueError(f"evaluation.fusion_dev_set {wanted!r} names no dev set")
        return self

    def input_paths(self) -> Iterator[Tuple[str, Path]]:
        """(label, path) for every referenced input file."""
        for role in ("pretrained", "domain", "ir", "vocab"):
            path = getattr(self.checkpoints, role)
            if path is not None:
                yield f"checkpoints.{role}", path
        for key in ("corpus", "queries", "qrels", "first_stage_run"):
            path = getattr(self.evaluation, key)
            if path is not None:
                yield f"evaluation.{key}", path
        for dev in self.sweep.dev_sets:
            for key in ("corpus", "queries", "qrels", "first_stage_run"):
                path = getattr(dev, key)
                if path is not None:
                    yield f"sweep.dev_sets.{dev.name}.{key}", path
        for alpha, tables in sorted(self.sweep.score_tables.items()):
            for name, path in sorted(tables.items()):
                yield f"sweep.score_tables.{alpha}.{name}", path
        for name, path in sorted(self.variant_score_tables.items()):
            yield f"variant_score_tables.{name}", path

    def relative(self, path: Path) -> str:
        """``path`` relative to the config directory when it lies below it."""
        if self._base_dir is not None:
            try:
                return Path(path).relative_to(self._base_dir).as_posix()
            except ValueError:
                pass
        return Path(path).as_posix()

    def canonical_text(self) -> str:
        """Canonical JSON of the validated document with config-relative paths."""
        def plain(node: Any) -> Any:
            if isinstance(node, dict):
                return {str(k): plain(v) for k, v in node.items()}
            if isinstance(node, (list, tuple)):
                return [plain(v) for v in node]
            if isinstance(node, Path):
                return self.relative(node)
            if isinstance(node, Enum):
                return node.value
            return node

        return canonical_json(plain(self.model_dump()))


def parse_experiment_config(data: Dict[str, Any], base_dir: Union[str, Path]) -> ExperimentConfig:
    try:
        config = ExperimentConfig.model_validate(data, context={"base_dir": Path(base_dir)})
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config: {e}")
    config._base_dir = Path(base_dir)
    return config


def load_experiment_config(path: Union[str, Path], check_inputs: bool = True) -> ExperimentConfig:
    """Parse an experiment JSON file; relative paths are taken from its directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingInputError(f"Experiment config not found: {path}")
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON ({e.msg})")
    if not isinstance(data, dict):
        raise DataFormatError(f"{path}: experiment config must be a JSON object")

    config = parse_experiment_config(data, path.resolve().parent)
    if check_inputs:
        missing = [f"{label}={p}" for label, p in config.input_paths() if not p.exists()]
        if missing:
            raise MissingInputError(f"Experiment inputs not found: {', '.join(missing)}")
    return config
