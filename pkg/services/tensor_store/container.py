"""
Tensor container reader/writer.

Layout: 8-byte little-endian header length N, N bytes of UTF-8 JSON
header, then the raw payload. The header maps tensor name to
{"dtype", "shape", "data_offsets"} with offsets relative to the payload
start, plus an optional "__metadata__" string map. This is the layout
used to distribute public model weights (safetensors).
"""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np

from services.lib.constants import ROLE_KEY
from services.lib.exceptions import (
    CheckpointWriteError,
    DuplicateTensorError,
    HeaderLengthError,
    InvariantViolation,
    MalformedHeaderError,
    MissingInputError,
    OffsetOutOfBoundsError,
    OverlappingOffsetsError,
    UnsupportedDtypeError,
)
from services.lib.logger import get_logger

logger = get_logger("tensor_store")

METADATA_KEY = "__metadata__"
HEADER_ALIGNMENT = 8

# container dtype code -> little-endian numpy dtype
DTYPES: Dict[str, np.dtype] = {
    "F16": np.dtype("<f2"),
    "F32": np.dtype("<f4"),
    "F64": np.dtype("<f8"),
    "I8": np.dtype("i1"),
    "I16": np.dtype("<i2"),
    "I32": np.dtype("<i4"),
    "I64": np.dtype("<i8"),
    "U8": np.dtype("u1"),
    "BOOL": np.dtype("?"),
}
FLOAT_DTYPES = frozenset({"F16", "F32", "F64"})


def dtype_code(array_dtype: np.dtype) -> str:
    """Container code for a numpy dtype."""
    normalized = np.dtype(array_dtype)
    if normalized.byteorder == ">":
        normalized = normalized.newbyteorder("<")
    for code, dt in DTYPES.items():
        if dt == normalized:
            return code
    raise UnsupportedDtypeError(f"Unsupported array dtype: {array_dtype}")


@dataclass(frozen=True)
class TensorEntry:
    """One named tensor: dtype code, shape and raw little-endian bytes."""
    name: str
    dtype: str
    shape: Tuple[int, ...]
    data: bytes

    @property
    def is_float(self) -> bool:
        return self.dtype in FLOAT_DTYPES

    @property
    def numel(self) -> int:
        return math.prod(self.shape)

    def validate(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise InvariantViolation("Tensor name must be a non-empty string")
        if self.name == METADATA_KEY:
            raise InvariantViolation(f"Tensor name {METADATA_KEY!r} is reserved")
        if self.dtype not in DTYPES:
            raise UnsupportedDtypeError(f"Tensor {self.name!r}: unsupported dtype {self.dtype!r}")
        if any((not isinstance(dim, int)) or dim < 0 for dim in self.shape):
            raise InvariantViolation(f"Tensor {self.name!r}: invalid shape {list(self.shape)}")
        expected = self.numel * DTYPES[self.dtype].itemsize
        if len(self.data) != expected:
            raise InvariantViolation(
                f"Tensor {self.name!r}: buffer holds {len(self.data)} bytes, shape needs {expected}"
            )

    def to_array(self) -> np.ndarray:
        """Read-only numpy view over the raw buffer."""
        return np.frombuffer(self.data, dtype=DTYPES[self.dtype]).reshape(self.shape)

    @classmethod
    def from_array(cls, name: str, array: np.ndarray) -> 'TensorEntry':
        code = dtype_code(array.dtype)
        contiguous = np.array(array, dtype=DTYPES[code], order="C", copy=True)
        return cls(name=name, dtype=code, shape=tuple(int(d) for d in contiguous.shape),
                   data=contiguous.tobytes())


@dataclass(frozen=True)
class Checkpoint:
    """Ordered collection of named tensors plus string metadata.

    Entries are always kept in lexicographic name order.
    """
    entries: Dict[str, TensorEntry] = field(default_factory=dict)
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ordered = {name: self.entries[name] for name in sorted(self.entries)}
        object.__setattr__(self, "entries", ordered)
        object.__setattr__(self, "metadata", dict(sorted(self.metadata.items())))

    @classmethod
    def from_entries(cls, entries: List[TensorEntry],
                     metadata: Optional[Mapping[str, str]] = None) -> 'Checkpoint':
        mapping: Dict[str, TensorEntry] = {}
        for entry in entries:
            if entry.name in mapping:
                raise DuplicateTensorError(f"Duplicate tensor name: {entry.name!r}")
            mapping[entry.name] = entry
        return cls(entries=mapping, metadata=dict(metadata or {}))

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray],
                    metadata: Optional[Mapping[str, str]] = None) -> 'Checkpoint':
        return cls.from_entries([TensorEntry.from_array(n, a) for n, a in arrays.items()], metadata)

    @property
    def role(self) -> Optional[str]:
        return self.metadata.get(ROLE_KEY)

    def names(self) -> List[str]:
        return list(self.entries)

    def __iter__(self) -> Iterator[TensorEntry]:
        return iter(self.entries.values())

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: object) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> TensorEntry:
        return self.entries[name]

    def array(self, name: str) -> np.ndarray:
        return self.entries[name].to_array()

    def validate(self) -> None:
        for name, entry in self.entries.items():
            if name != entry.name:
                raise InvariantViolation(f"Entry key {name!r} does not match tensor name {entry.name!r}")
            entry.validate()
        for key, value in self.metadata.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise InvariantViolation("Checkpoint metadata must map strings to strings")


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    """Canonical container bytes: lexicographic order, contiguous offsets."""
    ckpt.validate()

    header: Dict[str, Any] = {}
    if ckpt.metadata:
        header[METADATA_KEY] = dict(ckpt.metadata)

    offset = 0
    buffers = []
    for name in sorted(ckpt.entries):
        entry = ckpt.entries[name]
        end = offset + len(entry.data)
        header[name] = {
            "dtype": entry.dtype,
            "shape": list(entry.shape),
            "data_offsets": [offset, end],
        }
        buffers.append(entry.data)
        offset = end

    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"),
                              ensure_ascii=False).encode("utf-8")
    padding = (-len(header_bytes)) % HEADER_ALIGNMENT
    header_bytes += b" " * padding

    return struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(buffers)


def _reject_duplicate_keys(pairs: List[Tuple[str, Any]]) -> Dict[str, Any]:
    result: Dict[str, Any] = {}
    for key, value in pairs:
        if key in result:
            raise DuplicateTensorError(f"Duplicate tensor name in header: {key!r}")
        result[key] = value
    return result


def _parse_entry_header(name: str, spec: Any, payload_size: int) -> Tuple[str, Tuple[int, ...], int, int]:
    if not isinstance(spec, dict):
        raise MalformedHeaderError(f"Header entry for {name!r} is not an object")
    try:
        dtype = spec["dtype"]
        shape = spec["shape"]
        offsets = spec["data_offsets"]
    except KeyError as e:
        raise MalformedHeaderError(f"Header entry for {name!r} lacks field {e.args[0]!r}")

    if not isinstance(dtype, str) or dtype not in DTYPES:
        raise UnsupportedDtypeError(f"Tensor {name!r}: unsupported dtype {dtype!r}")
    if (not isinstance(shape, list)
            or any(isinstance(d, bool) or not isinstance(d, int) or d < 0 for d in shape)):
        raise MalformedHeaderError(f"Tensor {name!r}: invalid shape {shape!r}")
    if (not isinstance(offsets, list) or len(offsets) != 2
            or any(isinstance(o, bool) or not isinstance(o, int) for o in offsets)):
        raise MalformedHeaderError(f"Tensor {name!r}: invalid data_offsets {offsets!r}")

    begin, end = offsets
    if begin < 0 or end < begin or end > payload_size:
        raise OffsetOutOfBoundsError(
            f"Tensor {name!r}: data_offsets [{begin}, {end}] outside payload of {payload_size} bytes"
        )
    expected = math.prod(shape) * DTYPES[dtype].itemsize
    if end - begin != expected:
        raise MalformedHeaderError(
            f"Tensor {name!r}: data_offsets span {end - begin} bytes, shape {shape} needs {expected}"
        )
    return dtype, tuple(shape), begin, end


def deserialize_checkpoint(raw: bytes) -> Checkpoint:
    """Parse container bytes; payload bytes are never reinterpreted."""
    if len(raw) < 8:
        raise HeaderLengthError(f"Container is {len(raw)} bytes, too short for the length prefix")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if 8 + header_len > len(raw):
        raise HeaderLengthError(
            f"Header length {header_len} exceeds container size {len(raw)}"
        )

    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"),
                            object_pairs_hook=_reject_duplicate_keys)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedHeaderError(f"Header is not valid UTF-8 JSON: {e}")
    if not isinstance(header, dict):
        raise MalformedHeaderError("Header must be a JSON object")

    metadata = header.pop(METADATA_KEY, None) or {}
    if not isinstance(metadata, dict) or any(
            not isinstance(k, str) or not isinstance(v, str) for k, v in metadata.items()):
        raise MalformedHeaderError(f"{METADATA_KEY} must map strings to strings")

    payload = memoryview(raw)[8 + header_len:]
    spans = []
    entries = []
    for name, spec in header.items():
        if not name:
            raise MalformedHeaderError("Empty tensor name in header")
        dtype, shape, begin, end = _parse_entry_header(name, spec, len(payload))
        spans.append((begin, end, name))
        entries.append(TensorEntry(name=name, dtype=dtype, shape=shape,
                                   data=bytes(payload[begin:end])))

    spans.sort()
    furthest_end, furthest_name = 0, None
    for begin, end, name in spans:
        if begin == end:
            continue
        if begin < furthest_end:
            raise OverlappingOffsetsError(f"Tensors {furthest_name!r} and {name!r} have overlapping data")
        if end > furthest_end:
            furthest_end, furthest_name = end, name

    return Checkpoint.from_entries(entries, metadata)


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint or task vector from a container file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise MissingInputError(f"Checkpoint not found: {path}")
    ckpt = deserialize_checkpoint(raw)
    logger.debug(f"Read checkpoint {path}", tensors=len(ckpt), role=ckpt.role)
    return ckpt


def write_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    """Write the canonical container form of ``ckpt``."""
    path = Path(path)
    data = serialize_checkpoint(ckpt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise CheckpointWriteError(f"Cannot write checkpoint to {path}: {e}")
    logger.debug(f"Wrote checkpoint {path}", tensors=len(ckpt), bytes=len(data))
