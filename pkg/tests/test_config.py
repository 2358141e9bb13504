"""Tests for tool configuration, logging helpers and shared utilities."""

import pytest

from services.lib.common import canonical_json, format_alpha, ordered_map, pipeline_stage, sha256_bytes
from services.lib.config import AppConfig, ConfigManager
from services.lib.constants import Normalization
from services.lib.exceptions import (
    CompatibilityError,
    ConfigError,
    DataFormatError,
    InvariantViolation,
    MissingInputError,
    UsageError,
)
from services.lib.logger import PerformanceLogger, get_logger


@pytest.fixture
def clean_env(monkeypatch):
    for name in ConfigManager.ENV_MAPPINGS:
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


def test_defaults_without_file(tmp_path, clean_env):
    config = ConfigManager(config_dir=tmp_path).load_config()
    assert config == AppConfig()
    assert config.retrieval.k1 == 0.9
    assert config.retrieval.b == 0.4
    assert config.fusion.normalization is Normalization.MINMAX_PER_QUERY
    assert config.evaluation.metrics == ["P@10", "NDCG@3", "NDCG@10", "MAP@100"]


def test_shipped_defaults_match_builtins(clean_env):
    assert ConfigManager().load_config() == AppConfig()


def test_yaml_file(tmp_path, clean_env):
    path = tmp_path / "custom.yaml"
    path.write_text("taskfuse:\n  retrieval:\n    k1: 1.2\n  runtime:\n    workers: 4\n", encoding="utf-8")
    config = ConfigManager(config_dir=tmp_path).load_config(path)
    assert config.retrieval.k1 == 1.2
    assert config.retrieval.b == 0.4
    assert config.runtime.workers == 4


def test_relative_file_is_looked_up_in_config_dir(tmp_path, clean_env):
    (tmp_path / "other.yaml").write_text("retrieval:\n  depth: 10\n", encoding="utf-8")
    assert ConfigManager(config_dir=tmp_path).load_config("other.yaml").retrieval.depth == 10


def test_environment_overrides(tmp_path, clean_env):
    clean_env.setenv("TASKFUSE_WORKERS", "3")
    clean_env.setenv("TASKFUSE_BM25_B", "0.75")
    clean_env.setenv("TASKFUSE_LOG_LEVEL", "debug")
    config = ConfigManager(config_dir=tmp_path).load_config()
    assert config.runtime.workers == 3
    assert config.retrieval.b == 0.75
    assert config.logging.level == "debug"


def test_missing_explicit_file(tmp_path, clean_env):
    with pytest.raises(ConfigError, match="not found"):
        ConfigManager(config_dir=tmp_path).load_config(tmp_path / "absent.yaml")


@pytest.mark.parametrize("text", [
    "retrieval: [1, 2\n",
    "- just\n- a list\n",
    "retrieval:\n  depth: 0\n",
    "fusion:\n  lambda_llm: 2\n",
    "unknown_section: {}\n",
])
def test_invalid_files(tmp_path, clean_env, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(config_dir=tmp_path).load_config(path)


def test_config_errors_are_usage_errors():
    assert ConfigError("x").exit_code == 1
    assert issubclass(ConfigError, UsageError)


# errors and helpers


def test_exit_codes():
    assert UsageError("x").exit_code == 1
    assert DataFormatError("x").exit_code == 2
    assert MissingInputError("x").exit_code == 2
    assert InvariantViolation("x").exit_code == 3
    assert CompatibilityError("x").exit_code == 3


def test_compatibility_error_lists_offenders():
    error = CompatibilityError("Tensor sets differ", offenders=["b", "a"])
    assert error.offenders == ["a", "b"]
    assert str(error) == "Tensor sets differ: a, b"


def test_pipeline_stage_stamps_innermost_name():
    with pytest.raises(DataFormatError) as excinfo:
        with pipeline_stage("outer"):
            with pipeline_stage("inner"):
                raise DataFormatError("bad file")
    assert excinfo.value.stage == "inner"
    assert str(excinfo.value) == "[inner] bad file"


def test_pipeline_stage_ignores_other_exceptions():
    with pytest.raises(KeyError):
        with pipeline_stage("stage"):
            raise KeyError("x")


def test_ordered_map_keeps_input_order():
    items = list(range(50))
    assert ordered_map(lambda x: x * x, items, workers=8) == [x * x for x in items]
    assert ordered_map(str, [], workers=4) == []


@pytest.mark.parametrize("alpha,text", [(0.1, "0.1"), (1, "1.0"), (0.30000000000000004, "0.3"), (-0.5, "-0.5")])
def test_format_alpha(alpha, text):
    assert format_alpha(alpha) == text


def test_canonical_json_is_stable():
    assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1})
    assert canonical_json({}).endswith("\n")
    assert sha256_bytes(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_loggers_are_cached_per_component():
    assert get_logger("tests.a") is get_logger("tests.a")
    context = get_logger("tests.a").with_context(run="x")
    assert context.context == {"run": "x"}


def test_performance_logger_returns_duration():
    perf = PerformanceLogger("tests")
    assert perf.end_operation() is None
    perf.start_operation("step")
    assert perf.end_operation() >= 0.0
