"""
Structured error classes for taskfuse.

Every error carries the CLI exit code it maps to:
    1 - usage error
    2 - data / format error
    3 - numerical / contract violation
"""

from typing import Iterable, Optional


class TaskfuseError(Exception):
    """Base class for all taskfuse errors."""

    exit_code: int = 2

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class UsageError(TaskfuseError):
    """Invalid invocation or configuration values."""
    exit_code = 1


class ConfigError(UsageError):
    """Configuration-related errors."""
    pass


# Data / format errors (exit 2)

class DataFormatError(TaskfuseError):
    """Input file does not conform to its expected format."""
    exit_code = 2


class ContainerFormatError(DataFormatError):
    """Tensor container could not be parsed."""
    pass


class MalformedHeaderError(ContainerFormatError):
    pass


class HeaderLengthError(ContainerFormatError):
    pass


class OffsetOutOfBoundsError(ContainerFormatError):
    pass


class OverlappingOffsetsError(ContainerFormatError):
    pass


class DuplicateTensorError(ContainerFormatError):
    pass


class UnsupportedDtypeError(ContainerFormatError):
    pass


class CheckpointWriteError(DataFormatError):
    """Checkpoint could not be written to its destination."""
    pass


class DuplicateDocumentError(DataFormatError):
    pass


class MissingInputError(DataFormatError):
    """A required input file or per-alpha input is missing."""
    pass


# Contract violations (exit 3)

class ContractError(TaskfuseError):
    """Numerical or contract violation."""
    exit_code = 3


class InvariantViolation(ContractError):
    pass


class CompatibilityError(ContractError):
    """Two checkpoints cannot be combined under the requested policy."""

    def __init__(self, message: str, offenders: Iterable[str] = (), stage: Optional[str] = None):
        self.offenders = sorted(offenders)
        if self.offenders:
            message = f"{message}: {', '.join(self.offenders)}"
        super().__init__(message, stage=stage)


class DtypeMismatchError(CompatibilityError):
    pass


class NonFiniteAlphaError(ContractError):
    pass


class NonFloatTensorError(ContractError):
    pass


class MissingScoreError(ContractError):
    pass


class UnknownQueryError(ContractError):
    pass


class CandidateMismatchError(ContractError):
    pass


class InvalidFusionWeightsError(ContractError):
    pass


class EmptyGridError(ContractError):
    pass


class EmptyEvaluationError(ContractError):
    pass


class StatisticsError(ContractError):
    pass


__all__ = [
    'TaskfuseError',
    'UsageError',
    'ConfigError',
    'DataFormatError',
    'ContainerFormatError',
    'MalformedHeaderError',
    'HeaderLengthError',
    'OffsetOutOfBoundsError',
    'OverlappingOffsetsError',
    'DuplicateTensorError',
    'UnsupportedDtypeError',
    'CheckpointWriteError',
    'DuplicateDocumentError',
    'MissingInputError',
    'ContractError',
    'InvariantViolation',
    'CompatibilityError',
    'DtypeMismatchError',
    'NonFiniteAlphaError',
    'NonFloatTensorError',
    'MissingScoreError',
    'UnknownQueryError',
    'CandidateMismatchError',
    'InvalidFusionWeightsError',
    'EmptyGridError',
    'EmptyEvaluationError',
    'StatisticsError',
]
