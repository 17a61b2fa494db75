"""ATTN v1 tensor interchange format and the seed-pool manifest.

Binary layout (all integers little-endian):

    bytes 0..3    magic "ATTN"
    bytes 4..7    format version, u32 = 1
    byte  8       dtype code, u8 = 0 (f32le; the only code in v1)
    byte  9       ndim, u8
    then          ndim dimension sizes, u64 each
    then          payload, row-major f32le

The manifest is a JSON document binding tensor files to prompts, seeds,
timesteps, and token metadata:

    {"records": [{"prompt_id", "prompt_text", "seed", "timestep_index",
                  "total_steps", "model_family", "tensor_kind",
                  "spatial": [h, w] | null, "token_count",
                  "image_token_count": int | null,
                  "hooked_layer": int | null, "tensor_path"}]}

Shapes are declared in both the manifest and the tensor header; the loader
treats any disagreement as an error rather than trusting either side.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import (
    ManifestConsistencyError,
    ManifestSchemaError,
    TensorFormatError,
    TensorTruncationError,
    TensorValidationError,
)

MAGIC = b"ATTN"
FORMAT_VERSION = 1
DTYPE_F32LE = 0
MAX_NDIM = 8
_MAX_SEED = (1 << 64) - 1


class ModelFamily(str, Enum):
    UNET = "unet"
    DIT = "dit"


class TensorKind(str, Enum):
    STACKED_QN = "stacked_qn"        # (m, h*w, n) stacked U-Net cross-attention maps
    AGGREGATED_HWN = "aggregated_hwn"  # (h, w, n) head/block-averaged map
    DIT_JOINT = "dit_joint"          # (M+N, M+N) row-stochastic joint attention

    @property
    def family(self) -> ModelFamily:
        return ModelFamily.DIT if self is TensorKind.DIT_JOINT else ModelFamily.UNET


@dataclass(frozen=True)
class AttnTensor:
    """Dense, non-negative, finite attention array.

    In memory the data may be float32 or float64; serialization always encodes
    f32le, the only element type in format v1.
    """

    data: np.ndarray

    @classmethod
    def from_array(cls, values, *, copy: bool = False) -> "AttnTensor":
        arr = np.array(values, copy=True) if copy else np.asarray(values)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        arr = np.ascontiguousarray(arr)
        tensor = cls(arr)
        tensor.validate()
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def validate(self) -> None:
        if self.data.ndim < 1 or self.data.ndim > MAX_NDIM:
            raise TensorValidationError(
                f"tensor rank {self.data.ndim} outside supported range 1..{MAX_NDIM}"
            )
        if any(d < 1 for d in self.data.shape):
            raise TensorValidationError(f"tensor shape {self.shape} has an empty dimension")
        flat = self.data.reshape(-1)
        bad = ~(np.isfinite(flat) & (flat >= 0))
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise TensorValidationError(
                f"element at flat index {idx} is {flat[idx]!r}; "
                "attention values must be finite and >= 0"
            )


def write_tensor(tensor: AttnTensor, sink: BinaryIO) -> int:
    """Serialize `tensor` to `sink` in ATTN v1 layout; returns bytes written."""
    tensor.validate()
    header = MAGIC + struct.pack("<I", FORMAT_VERSION) + bytes([DTYPE_F32LE, tensor.ndim])
    header += b"".join(struct.pack("<Q", d) for d in tensor.shape)
    payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def _read_exact(source: BinaryIO, count: int, what: str) -> bytes:
    data = source.read(count)
    if len(data) != count:
        raise TensorTruncationError(f"stream ended inside {what}", count, len(data))
    return data


def _read_shape(source: BinaryIO) -> tuple[int, ...]:
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(source, 4, "version"))
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"unsupported format version {version}, expected {FORMAT_VERSION}")
    dtype_code = _read_exact(source, 1, "dtype code")[0]
    if dtype_code != DTYPE_F32LE:
        raise TensorFormatError(f"unsupported dtype code {dtype_code}, expected {DTYPE_F32LE} (f32le)")
    ndim = _read_exact(source, 1, "ndim")[0]
    if ndim < 1 or ndim > MAX_NDIM:
        raise TensorFormatError(f"tensor rank {ndim} outside supported range 1..{MAX_NDIM}")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(source, 8 * ndim, "dimension sizes"))
    if any(d < 1 for d in dims):
        raise TensorFormatError(f"tensor shape {dims} has an empty dimension")
    return tuple(int(d) for d in dims)


def read_tensor(source: BinaryIO) -> AttnTensor:
    """Parse and fully validate an ATTN v1 stream."""
    shape = _read_shape(source)
    count = 1
    for d in shape:
        count *= d
    payload = _read_exact(source, 4 * count, "tensor payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    arr.flags.writeable = False
    return AttnTensor.from_array(arr)


def save_tensor(tensor: AttnTensor, path: str | Path) -> int:
    with open(path, "wb") as sink:
        return write_tensor(tensor, sink)


def load_tensor(path: str | Path) -> AttnTensor:
    with open(path, "rb") as source:
        return read_tensor(source)


def peek_shape(path: str | Path) -> tuple[int, ...]:
    """Read only the header of a tensor file and return its declared shape."""
    with open(path, "rb") as source:
        return _read_shape(source)


_MANIFEST_FIELDS = (
    "prompt_id",
    "prompt_text",
    "seed",
    "timestep_index",
    "total_steps",
    "model_family",
    "tensor_kind",
    "spatial",
    "token_count",
    "image_token_count",
    "hooked_layer",
    "tensor_path",
)


@dataclass
class SeedRecord:
    """One seed's identity plus its tensor reference and capture metadata."""

    prompt_id: str
    prompt_text: str
    seed: int
    timestep_index: int
    total_steps: int
    model_family: ModelFamily
    tensor_kind: TensorKind
    spatial: tuple[int, int] | None
    token_count: int
    image_token_count: int | None
    hooked_layer: int | None
    tensor_path: str | None
    base_dir: Path | None = None
    tensor: AttnTensor | None = field(default=None, repr=False)

    def __post_init__(self):
        self.model_family = ModelFamily(self.model_family)
        self.tensor_kind = TensorKind(self.tensor_kind)
        label = self.label()
        if not (0 <= self.seed <= _MAX_SEED):
            raise ManifestSchemaError(f"record {label}: seed outside the 64-bit unsigned range")
        if self.total_steps < 1:
            raise ManifestSchemaError(f"record {label}: total_steps must be >= 1")
        if not (1 <= self.timestep_index <= self.total_steps):
            raise ManifestSchemaError(
                f"record {label}: timestep_index {self.timestep_index} outside "
                f"1..{self.total_steps}"
            )
        if self.token_count < 1:
            raise ManifestSchemaError(f"record {label}: token_count must be >= 1")
        if self.tensor_kind.family is not self.model_family:
            raise ManifestSchemaError(
                f"record {label}: tensor_kind {self.tensor_kind.value} does not belong to "
                f"model_family {self.model_family.value}"
            )
        if self.model_family is ModelFamily.UNET:
            if self.spatial is None:
                raise ManifestSchemaError(f"record {label}: spatial is required for unet kinds")
            self.spatial = (int(self.spatial[0]), int(self.spatial[1]))
            if self.spatial[0] < 1 or self.spatial[1] < 1:
                raise ManifestSchemaError(f"record {label}: spatial {self.spatial} must be >= 1")
        else:
            if self.image_token_count is None or self.image_token_count < 1:
                raise ManifestSchemaError(
                    f"record {label}: image_token_count >= 1 is required for dit_joint kinds"
                )

    def label(self) -> str:
        return f"{self.prompt_id}/seed={self.seed}/t={self.timestep_index}"

    def expected_shape(self) -> tuple[int, ...] | None:
        """Declared tensor shape, up to the free stacked dimension (None slot)."""
        if self.tensor_kind is TensorKind.STACKED_QN:
            h, w = self.spatial  # type: ignore[misc]
            return (0, h * w, self.token_count)  # leading dim free (m >= 1)
        if self.tensor_kind is TensorKind.AGGREGATED_HWN:
            h, w = self.spatial  # type: ignore[misc]
            return (h, w, self.token_count)
        side = self.image_token_count + self.token_count  # type: ignore[operator]
        return (side, side)

    def check_shape(self, shape: Sequence[int]) -> None:
        expected = self.expected_shape()
        shape = tuple(int(d) for d in shape)
        ok = len(shape) == len(expected) and all(
            e == 0 or e == s for e, s in zip(expected, shape)
        )
        if self.tensor_kind is TensorKind.STACKED_QN and ok:
            ok = shape[0] >= 1
        if not ok:
            want = tuple("m" if e == 0 else e for e in expected)
            raise ManifestConsistencyError(
                f"record {self.label()}: tensor shape {shape} does not match "
                f"declared metadata (expected {want})"
            )

    def resolve_path(self) -> Path:
        if self.tensor_path is None:
            raise ManifestConsistencyError(f"record {self.label()}: no tensor_path to resolve")
        path = Path(self.tensor_path)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def load_tensor(self) -> AttnTensor:
        """Return the in-memory tensor, reading and validating from disk if needed."""
        if self.tensor is not None:
            return self.tensor
        tensor = load_tensor(self.resolve_path())
        self.check_shape(tensor.shape)
        return tensor

    def to_json(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "prompt_text": self.prompt_text,
            "seed": self.seed,
            "timestep_index": self.timestep_index,
            "total_steps": self.total_steps,
            "model_family": self.model_family.value,
            "tensor_kind": self.tensor_kind.value,
            "spatial": list(self.spatial) if self.spatial is not None else None,
            "token_count": self.token_count,
            "image_token_count": self.image_token_count,
            "hooked_layer": self.hooked_layer,
            "tensor_path": self.tensor_path,
        }


def record_from_json(obj: dict, ordinal: int, base_dir: Path) -> SeedRecord:
    if not isinstance(obj, dict):
        raise ManifestSchemaError(f"record #{ordinal}: expected an object, got {type(obj).__name__}")
    for key in _MANIFEST_FIELDS:
        if key not in obj:
            raise ManifestSchemaError(f"record #{ordinal}: missing field '{key}'")
    spatial = obj["spatial"]
    if spatial is not None:
        if not (isinstance(spatial, (list, tuple)) and len(spatial) == 2):
            raise ManifestSchemaError(f"record #{ordinal}: field 'spatial' must be [h, w] or null")
        spatial = (int(spatial[0]), int(spatial[1]))
    try:
        return SeedRecord(
            prompt_id=str(obj["prompt_id"]),
            prompt_text=str(obj["prompt_text"]),
            seed=int(obj["seed"]),
            timestep_index=int(obj["timestep_index"]),
            total_steps=int(obj["total_steps"]),
            model_family=obj["model_family"],
            tensor_kind=obj["tensor_kind"],
            spatial=spatial,
            token_count=int(obj["token_count"]),
            image_token_count=None if obj["image_token_count"] is None else int(obj["image_token_count"]),
            hooked_layer=None if obj["hooked_layer"] is None else int(obj["hooked_layer"]),
            tensor_path=str(obj["tensor_path"]),
            base_dir=base_dir,
        )
    except (ValueError, TypeError) as exc:
        raise ManifestSchemaError(f"record #{ordinal}: {exc}") from exc


def load_manifest(path: str | Path, *, check_tensors: bool = True) -> list[SeedRecord]:
    """Parse a manifest and verify each record against its tensor file header.

    With check_tensors=True (the default) every referenced file must exist and
    its header shape must agree with the record's metadata; payload validation
    (finiteness, row sums) is deferred to load_tensor / the validate command.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestSchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "records" not in doc:
        raise ManifestSchemaError(f"{path}: missing top-level field 'records'")
    if not isinstance(doc["records"], list):
        raise ManifestSchemaError(f"{path}: field 'records' must be an array")
    records = [
        record_from_json(obj, i, path.parent) for i, obj in enumerate(doc["records"])
    ]
    if check_tensors:
        for record in records:
            tensor_path = record.resolve_path()
            if not tensor_path.is_file():
                raise ManifestConsistencyError(
                    f"record {record.label()}: tensor file {tensor_path} does not exist"
                )
            record.check_shape(peek_shape(tensor_path))
    return records


def save_manifest(records: Iterable[SeedRecord], path: str | Path) -> Path:
    path = Path(path)
    doc = {"records": [record.to_json() for record in records]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


def materialize(record: SeedRecord, directory: str | Path, filename: str) -> SeedRecord:
    """Write an in-memory record's tensor under `directory` and rebind the record to it."""
    if record.tensor is None:
        raise ManifestConsistencyError(f"record {record.label()}: no in-memory tensor to write")
    directory = Path(directory)
    save_tensor(record.tensor, directory / filename)
    return replace(record, tensor=None, tensor_path=filename, base_dir=directory)
