"""Task vector extraction and scaled merging."""

from services.task_arith.arithmetic import (
    CompatibilityReport,
    MergeSpec,
    apply_task_vector,
    check_compatibility,
    combine_task_vectors,
    diff_checkpoints,
    negate_task_vector,
)

__all__ = [
    'CompatibilityReport',
    'MergeSpec',
    'apply_task_vector',
    'check_compatibility',
    'combine_task_vectors',
    'diff_checkpoints',
    'negate_task_vector',
]
