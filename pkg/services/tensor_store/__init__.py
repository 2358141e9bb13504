"""Bit-exact checkpoint and task vector storage."""

from services.tensor_store.container import (
    DTYPES,
    FLOAT_DTYPES,
    Checkpoint,
    TensorEntry,
    deserialize_checkpoint,
    dtype_code,
    read_checkpoint,
    serialize_checkpoint,
    write_checkpoint,
)

# A task vector shares the checkpoint structure; its metadata role is "task_vector".
TaskVector = Checkpoint

__all__ = [
    'DTYPES',
    'FLOAT_DTYPES',
    'Checkpoint',
    'TaskVector',
    'TensorEntry',
    'deserialize_checkpoint',
    'dtype_code',
    'read_checkpoint',
    'serialize_checkpoint',
    'write_checkpoint',
]
