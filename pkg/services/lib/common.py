"""
Common helpers: stage tagging for errors, content hashing, ordered
parallel map and canonical JSON.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, List, TypeVar, Union

from services.lib.exceptions import TaskfuseError

T = TypeVar("T")
R = TypeVar("R")


@contextmanager
def pipeline_stage(name: str) -> Iterator[None]:
    """Stamp ``name`` on any TaskfuseError escaping the block."""
    try:
        yield
    except TaskfuseError as e:
        if e.stage is None:
            e.stage = name
        raise


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Map ``fn`` over ``items``, results in input order whatever ``workers`` is."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sha256_file(path: Union[str, Path], chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(data: Any) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def format_alpha(alpha: float) -> str:
    """Stable text key for a scaling factor (0.1 -> '0.1', 1 -> '1.0')."""
    return repr(float(round(alpha, 10)))
