"""
Configuration management module for taskfuse.

Provides centralized loading of tool-wide defaults from YAML with
environment variable override support.
"""

import os
import yaml
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

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
    Gain,
    Normalization,
)
from services.lib.exceptions import ConfigError


DEFAULT_CONFIG_DIR = Path(__file__).resolve().parent.parent.parent / "config"


class BaseConfig(BaseModel):
    """Base configuration class with common settings."""
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class LoggingConfig(BaseConfig):
    level: str = "INFO"
    log_dir: Optional[str] = None
    structured: bool = True


class RetrievalConfig(BaseConfig):
    """First-stage BM25 defaults."""
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    depth: int = Field(default=DEFAULT_DEPTH, ge=1)
    ascii_fold: bool = False


class FusionConfig(BaseConfig):
    lambda_bm25: float = Field(default=DEFAULT_LAMBDA_BM25, ge=0.0, le=1.0)
    lambda_llm: float = Field(default=DEFAULT_LAMBDA_LLM, ge=0.0, le=1.0)
    normalization: Normalization = Normalization.MINMAX_PER_QUERY
    grid_step: float = Field(default=DEFAULT_GRID_STEP, gt=0.0, le=1.0)


class SweepDefaults(BaseConfig):
    alphas: List[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    objective_metric: str = DEFAULT_OBJECTIVE


class EvaluationConfig(BaseConfig):
    metrics: List[str] = Field(default_factory=lambda: list(DEFAULT_METRICS))
    gain: Gain = Gain.LINEAR
    family_alpha: float = Field(default=DEFAULT_FAMILY_ALPHA, gt=0.0, lt=1.0)


class RuntimeConfig(BaseConfig):
    workers: int = Field(default=1, ge=1)


class AppConfig(BaseConfig):
    """Main application configuration."""
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    sweep: SweepDefaults = Field(default_factory=SweepDefaults)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)

    @field_validator("sweep")
    @classmethod
    def _alphas_not_empty(cls, value: SweepDefaults) -> SweepDefaults:
        if not value.alphas:
            raise ValueError("sweep.alphas must not be empty")
        return value


class ConfigManager:
    """Configuration manager for loading and validating configs."""

    ENV_MAPPINGS = {
        'TASKFUSE_LOG_LEVEL': ['logging', 'level'],
        'TASKFUSE_LOG_DIR': ['logging', 'log_dir'],
        'TASKFUSE_WORKERS': ['runtime', 'workers'],
        'TASKFUSE_BM25_K1': ['retrieval', 'k1'],
        'TASKFUSE_BM25_B': ['retrieval', 'b'],
        'TASKFUSE_DEPTH': ['retrieval', 'depth'],
    }

    def __init__(self, config_dir: Union[str, Path] = DEFAULT_CONFIG_DIR):
        self.config_dir = Path(config_dir)
        self._config: Optional[AppConfig] = None

    def load_config(self, config_file: Optional[Union[str, Path]] = None) -> AppConfig:
        """Load configuration from YAML file with environment overrides.

        Without an explicit file the default ``taskfuse.yaml`` is used when
        present, built-in defaults otherwise.
        """
        load_dotenv(override=False)

        if config_file is None:
            config_path = self.config_dir / "taskfuse.yaml"
            if not config_path.exists():
                yaml_data: Dict[str, Any] = {}
                config_path = None
        else:
            config_path = Path(config_file)
            if not config_path.is_absolute() and not config_path.exists():
                config_path = self.config_dir / config_path
            if not config_path.exists():
                raise ConfigError(f"Configuration file not found: {config_path}")

        if config_path is not None:
            try:
                with open(config_path, 'r', encoding='utf-8') as f:
                    yaml_data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Invalid YAML in {config_path}: {e}")
            if not isinstance(yaml_data, dict):
                raise ConfigError(f"Top level of {config_path} must be a mapping")
            yaml_data = yaml_data.get('taskfuse', yaml_data)

        yaml_data = self._apply_env_overrides(yaml_data)

        try:
            self._config = AppConfig(**yaml_data)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}")
        return self._config

    def get_config(self) -> AppConfig:
        """Get current configuration, loading default if not loaded."""
        if self._config is None:
            self.load_config()
        return self._config

    def _apply_env_overrides(self, config_data: Dict[str, Any]) -> Dict[str, Any]:
        """Apply environment variable overrides to configuration."""
        for env_var, config_path in self.ENV_MAPPINGS.items():
            env_value = os.getenv(env_var)
            if env_value is not None:
                self._set_nested_config(config_data, config_path, env_value)
        return config_data

    def _set_nested_config(self, config_data: Dict[str, Any],
                           path: list[str], value: str) -> None:
        current = config_data
        for key in path[:-1]:
            if not isinstance(current.get(key), dict):
                current[key] = {}
            current = current[key]
        current[path[-1]] = self._convert_env_value(value)

    def _convert_env_value(self, value: str) -> Union[str, int, float, bool]:
        """Convert environment variable string to appropriate type."""
        if value.lower() in ('true', 'yes', 'on'):
            return True
        if value.lower() in ('false', 'no', 'off'):
            return False
        if value.isdigit():
            return int(value)
        try:
            return float(value)
        except ValueError:
            return value


# Global configuration manager instance
config_manager = ConfigManager()


def get_config() -> AppConfig:
    """Get application configuration."""
    return config_manager.get_config()
