"""
Logging wrapper around loguru for consistent logging across taskfuse components.

Provides component loggers with context injection, a stderr sink and an
optional rotating JSON file sink.
"""

import sys
import json
from pathlib import Path
from typing import Any, Dict, Optional
from loguru import logger
from datetime import datetime


class LoggerConfig:
    """Logger configuration settings."""

    def __init__(
        self,
        level: str = "INFO",
        format_string: Optional[str] = None,
        log_dir: Optional[str] = None,
        max_size: str = "20 MB",
        retention: str = "14 days",
        structured: bool = True,
    ):
        self.level = level.upper()
        self.format_string = format_string or self._default_format()
        self.log_dir = Path(log_dir) if log_dir else None
        self.max_size = max_size
        self.retention = retention
        self.structured = structured

    def _default_format(self) -> str:
        return (
            "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | "
            "<level>{level: <8}</level> | "
            "<cyan>{extra[component]}</cyan> | "
            "{extra[context]} | "
            "<level>{message}</level>"
        )


def _format_context(context: Dict[str, Any]) -> str:
    if not context:
        return "-"
    parts = []
    for key, value in context.items():
        if isinstance(value, (dict, list)):
            value_str = json.dumps(value, default=str, sort_keys=True)
        else:
            value_str = str(value)
        parts.append(f"{key}={value_str}")
    return " ".join(parts)


class ContextLogger:
    """Logger bound to a component, with key=value context."""

    def __init__(self, name: str, context: Optional[Dict[str, Any]] = None):
        self.name = name
        self.context: Dict[str, Any] = dict(context or {})

    def _bound(self, **kwargs):
        context = {**self.context, **kwargs}
        return logger.bind(component=self.name, context=_format_context(context))

    def with_context(self, **kwargs) -> 'ContextLogger':
        """Create logger with additional context."""
        return ContextLogger(self.name, {**self.context, **kwargs})

    def debug(self, message: str, **kwargs) -> None:
        self._bound(**kwargs).debug(message)

    def info(self, message: str, **kwargs) -> None:
        self._bound(**kwargs).info(message)

    def warning(self, message: str, **kwargs) -> None:
        self._bound(**kwargs).warning(message)


class ComponentLogger:
    """Component-specific logger factory owning the loguru sinks."""

    _loggers: Dict[str, ContextLogger] = {}
    _config: Optional[LoggerConfig] = None
    _configured: bool = False

    @classmethod
    def _install_sinks(cls) -> None:
        config = cls._config or LoggerConfig()
        logger.remove()
        logger.configure(extra={"component": "taskfuse", "context": "-"})

        logger.add(
            sys.stderr,
            format=config.format_string,
            level=config.level,
        )

        if config.log_dir is not None:
            config.log_dir.mkdir(parents=True, exist_ok=True)
            logger.add(
                config.log_dir / "taskfuse.log",
                format=config.format_string,
                level=config.level,
                rotation=config.max_size,
                retention=config.retention,
                serialize=config.structured,
            )
        cls._configured = True

    @classmethod
    def configure(cls, config: LoggerConfig) -> None:
        """Configure global logger settings."""
        cls._config = config
        cls._install_sinks()

    @classmethod
    def get_logger(cls, component: str) -> ContextLogger:
        """Get or create logger for component."""
        if not cls._configured:
            cls._install_sinks()
        if component not in cls._loggers:
            cls._loggers[component] = ContextLogger(component)
        return cls._loggers[component]


def get_logger(component: str) -> ContextLogger:
    """Get logger for component."""
    return ComponentLogger.get_logger(component)


def configure_logging(
    level: str = "INFO",
    log_dir: Optional[str] = None,
    structured: bool = True,
) -> None:
    """Configure global logging settings."""
    ComponentLogger.configure(LoggerConfig(level=level, log_dir=log_dir, structured=structured))


class PerformanceLogger:
    """Wall-clock timings of pipeline stages, logged but never written to reports."""

    def __init__(self, component: str):
        self.logger = get_logger(f"{component}.perf")
        self.start_time: Optional[datetime] = None
        self.operation: Optional[str] = None

    def start_operation(self, operation: str, **context) -> None:
        self.operation = operation
        self.start_time = datetime.now()
        self.logger.with_context(**context).debug(f"Stage started: {operation}")

    def end_operation(self, **context) -> Optional[float]:
        """Seconds since ``start_operation``, or None when no stage is open."""
        if self.start_time is None or self.operation is None:
            self.logger.warning("end_operation called without an open stage")
            return None

        elapsed = (datetime.now() - self.start_time).total_seconds()
        self.logger.with_context(stage=self.operation, seconds=round(elapsed, 3), **context).info(
            f"Stage finished: {self.operation}"
        )
        self.start_time, self.operation = None, None
        return elapsed
