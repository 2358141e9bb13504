"""
Task vector arithmetic.

    tau    = theta_D - theta_0              (extraction)
    theta' = theta_T + alpha * tau          (scaled merge)

All float arithmetic accumulates in float64 and rounds once to the
storage dtype of the inputs. Non-float tensors are never differenced:
extraction lists them under omitted_tensors and merging passes the
target copy through.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from services.lib.common import format_alpha, ordered_map
from services.lib.constants import ALPHA_KEY, OMITTED_KEY, ROLE_KEY, MismatchPolicy, Role
from services.lib.exceptions import (
    CompatibilityError,
    DtypeMismatchError,
    NonFiniteAlphaError,
    NonFloatTensorError,
    UsageError,
)
from services.lib.logger import get_logger
from services.tensor_store import DTYPES, Checkpoint, TaskVector, TensorEntry

logger = get_logger("task_arith")


@dataclass(frozen=True)
class MergeSpec:
    """Scaling factor and mismatch policy for a merge.

    Accumulation is always float64; outputs keep the input dtype.
    """
    alpha: float = 1.0
    mismatch_policy: MismatchPolicy = MismatchPolicy.STRICT

    def __post_init__(self) -> None:
        object.__setattr__(self, "mismatch_policy", MismatchPolicy(self.mismatch_policy))
        try:
            alpha = float(self.alpha)
        except (TypeError, ValueError):
            raise NonFiniteAlphaError(f"alpha must be a real number, got {self.alpha!r}")
        if not math.isfinite(alpha):
            raise NonFiniteAlphaError(f"alpha must be finite, got {alpha!r}")
        object.__setattr__(self, "alpha", alpha)


@dataclass
class CompatibilityReport:
    """Outcome of matching two checkpoints tensor by tensor."""
    shared: List[str] = field(default_factory=list)
    omitted: Dict[str, str] = field(default_factory=dict)
    passthrough: List[str] = field(default_factory=list)

    def warnings(self) -> List[str]:
        return [f"{name}: {reason}" for name, reason in sorted(self.omitted.items())]


def check_compatibility(
    left: Checkpoint,
    right: Checkpoint,
    policy: Union[MismatchPolicy, str] = MismatchPolicy.STRICT,
    *,
    target_mode: bool = False,
) -> CompatibilityReport:
    """Match ``left`` against ``right`` under ``policy``.

    With ``target_mode`` the left side is a merge target and the right side a
    task vector: target tensors absent from the task vector pass through
    (under strict only when they are non-float), and under skip so do target
    tensors whose shape disagrees with the task vector.
    """
    policy = MismatchPolicy(policy)
    report = CompatibilityReport()

    left_names, right_names = set(left.names()), set(right.names())
    shared = sorted(left_names & right_names)
    left_only = sorted(left_names - right_names)
    right_only = sorted(right_names - left_names)

    dtype_conflicts = [n for n in shared if left[n].dtype != right[n].dtype]
    if dtype_conflicts:
        raise DtypeMismatchError("Tensors disagree on dtype", dtype_conflicts)

    shape_conflicts = [n for n in shared if left[n].shape != right[n].shape]

    if target_mode:
        strict_left_offenders = [n for n in left_only if left[n].is_float]
        report.passthrough = [n for n in left_only if not left[n].is_float]
    else:
        strict_left_offenders = left_only

    if policy is MismatchPolicy.STRICT:
        offenders = strict_left_offenders + right_only + shape_conflicts
        if offenders:
            raise CompatibilityError("Checkpoints are not strictly compatible", offenders)
    elif policy is MismatchPolicy.INTERSECT and shape_conflicts:
        raise CompatibilityError("Shared tensors disagree on shape", shape_conflicts)

    for name in left_only:
        if target_mode:
            if name not in report.passthrough:
                report.passthrough.append(name)
        else:
            report.omitted[name] = "present only in first input"
    for name in right_only:
        report.omitted[name] = "present only in second input"
    for name in shape_conflicts:
        report.omitted[name] = (f"shape mismatch {list(left[name].shape)} vs {list(right[name].shape)}")
        if target_mode:
            # the target keeps its own tensor unchanged
            report.passthrough.append(name)

    report.shared = [n for n in shared if n not in shape_conflicts]
    report.passthrough.sort()
    return report


def _log_omissions(operation: str, report: CompatibilityReport) -> None:
    for line in report.warnings():
        logger.warning(f"{operation}: omitted tensor {line}")


def _omission_metadata(omitted: Dict[str, str]) -> Dict[str, str]:
    if not omitted:
        return {}
    return {OMITTED_KEY: json.dumps(sorted(omitted), separators=(",", ":"))}


def _to_storage(values: np.ndarray, like: TensorEntry) -> TensorEntry:
    with np.errstate(over="ignore"):
        rounded = values.astype(DTYPES[like.dtype])
    return TensorEntry.from_array(like.name, rounded)


def _run_kernel(names: Sequence[str], kernel: Callable[[str], TensorEntry], workers: int) -> List[TensorEntry]:
    return ordered_map(kernel, sorted(names), workers=workers)


def diff_checkpoints(
    theta_d: Checkpoint,
    theta_0: Checkpoint,
    policy: Union[MismatchPolicy, str] = MismatchPolicy.STRICT,
    workers: int = 1,
) -> TaskVector:
    """Extract the task vector ``theta_d - theta_0``."""
    policy = MismatchPolicy(policy)
    report = check_compatibility(theta_d, theta_0, policy)
    for name in report.shared:
        if not theta_d[name].is_float:
            report.omitted[name] = f"non-float dtype {theta_d[name].dtype} is not differenced"
    _log_omissions("diff", report)

    float_names = [n for n in report.shared if theta_d[n].is_float]

    def kernel(name: str) -> TensorEntry:
        d = theta_d[name].to_array().astype(np.float64)
        o = theta_0[name].to_array().astype(np.float64)
        return _to_storage(d - o, theta_d[name])

    entries = _run_kernel(float_names, kernel, workers)
    metadata = {
        ROLE_KEY: Role.TASK_VECTOR.value,
        "source": f"{theta_d.role or 'unknown'} - {theta_0.role or 'unknown'}",
        "mismatch_policy": policy.value,
        **_omission_metadata(report.omitted),
    }
    logger.info("Extracted task vector", tensors=len(entries), policy=policy.value,
                omitted=len(report.omitted))
    return Checkpoint.from_entries(entries, metadata)


def apply_task_vector(
    theta_t: Checkpoint,
    tau: TaskVector,
    spec: MergeSpec,
    workers: int = 1,
) -> Checkpoint:
    """Merge ``theta_t + alpha * tau``; target tensors absent from tau pass through."""
    non_float = [entry.name for entry in tau if not entry.is_float]
    if non_float:
        raise NonFloatTensorError(f"Task vector holds non-float tensors: {', '.join(sorted(non_float))}")

    report = check_compatibility(theta_t, tau, spec.mismatch_policy, target_mode=True)
    _log_omissions("apply", report)

    alpha = spec.alpha

    def kernel(name: str) -> TensorEntry:
        if alpha == 0.0:
            return theta_t[name]
        base = theta_t[name].to_array().astype(np.float64)
        delta = tau[name].to_array().astype(np.float64)
        return _to_storage(base + alpha * delta, theta_t[name])

    merged = _run_kernel(report.shared, kernel, workers)
    passthrough = [theta_t[name] for name in report.passthrough]

    metadata = {
        ROLE_KEY: Role.MERGED.value,
        ALPHA_KEY: format_alpha(alpha),
        "source": f"{theta_t.role or 'unknown'} + alpha * task_vector",
        "mismatch_policy": spec.mismatch_policy.value,
        **_omission_metadata(report.omitted),
    }
    logger.info("Applied task vector", alpha=format_alpha(alpha), merged=len(merged),
                passthrough=len(passthrough))
    return Checkpoint.from_entries(merged + passthrough, metadata)


def negate_task_vector(tau: TaskVector) -> TaskVector:
    """Elementwise negation; negating twice restores the input."""
    entries = []
    for entry in tau:
        if entry.is_float:
            entries.append(TensorEntry.from_array(entry.name, np.negative(entry.to_array())))
        else:
            entries.append(entry)

    metadata = dict(tau.metadata)
    if metadata.pop("negated", None) is None:
        metadata["negated"] = "true"
    metadata[ROLE_KEY] = Role.TASK_VECTOR.value
    return Checkpoint.from_entries(entries, metadata)


def combine_task_vectors(
    terms: Sequence[Tuple[TaskVector, float]],
    workers: int = 1,
) -> TaskVector:
    """Weighted sum of task vectors, accumulated in float64."""
    if not terms:
        raise UsageError("combine needs at least one (task vector, weight) term")

    weights = []
    for _, weight in terms:
        weight = float(weight)
        if not math.isfinite(weight):
            raise NonFiniteAlphaError(f"Combination weight must be finite, got {weight!r}")
        weights.append(weight)

    first = terms[0][0]
    for other, _ in terms[1:]:
        check_compatibility(first, other, MismatchPolicy.STRICT)

    non_float = [entry.name for entry in first if not entry.is_float]
    if non_float:
        raise NonFloatTensorError(f"Task vector holds non-float tensors: {', '.join(sorted(non_float))}")

    def kernel(name: str) -> TensorEntry:
        acc = np.zeros(first[name].shape, dtype=np.float64)
        for (vector, _), weight in zip(terms, weights):
            acc += weight * vector[name].to_array().astype(np.float64)
        return _to_storage(acc, first[name])

    entries = _run_kernel(first.names(), kernel, workers)
    metadata = {
        ROLE_KEY: Role.TASK_VECTOR.value,
        "weights": json.dumps(weights),
        "source": f"combination of {len(terms)} task vectors",
    }
    return Checkpoint.from_entries(entries, metadata)
