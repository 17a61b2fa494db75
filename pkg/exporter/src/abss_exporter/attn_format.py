"""Writer for the engine's on-disk interchange formats.

Implements the ATTN v1 byte layout and the manifest/annotation JSON schemas
directly from their wire documentation, so the exporter stays decoupled from
the engine package: the only shared surface is the format itself.

ATTN v1: "ATTN" magic, u32le version = 1, u8 dtype = 0 (f32le), u8 ndim,
ndim u64le dimension sizes, then row-major f32le payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ATTN"
VERSION = 1
DTYPE_F32LE = 0


def write_attn_tensor(values: np.ndarray, path: str | Path) -> int:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim < 1:
        raise ValueError("tensor must have at least one dimension")
    if not np.isfinite(values).all() or (values < 0).any():
        raise ValueError("attention values must be finite and non-negative")
    header = MAGIC + struct.pack("<I", VERSION) + bytes([DTYPE_F32LE, values.ndim])
    header += b"".join(struct.pack("<Q", d) for d in values.shape)
    payload = values.tobytes()
    with open(path, "wb") as sink:
        sink.write(header)
        sink.write(payload)
    return len(header) + len(payload)


def manifest_record(*, prompt_id: str, prompt_text: str, seed: int, timestep_index: int,
                    total_steps: int, model_family: str, tensor_kind: str,
                    spatial: tuple[int, int] | None, token_count: int,
                    image_token_count: int | None, hooked_layer: int | None,
                    tensor_path: str) -> dict:
    return {
        "prompt_id": prompt_id,
        "prompt_text": prompt_text,
        "seed": seed,
        "timestep_index": timestep_index,
        "total_steps": total_steps,
        "model_family": model_family,
        "tensor_kind": tensor_kind,
        "spatial": list(spatial) if spatial is not None else None,
        "token_count": token_count,
        "image_token_count": image_token_count,
        "hooked_layer": hooked_layer,
        "tensor_path": tensor_path,
    }


def write_manifest(records: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"records": records}, fh, indent=2)
        fh.write("\n")
    return path


def write_annotations(annotations: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(annotations, fh, indent=2)
        fh.write("\n")
    return path
