"""Pool export: run every (prompt, seed) pair to the screening step and dump
the captured attention as ATTN v1 tensors plus a manifest the engine can load."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from .attn_format import manifest_record, write_annotations, write_attn_tensor, write_manifest
from .config import ExportConfig
from .errors import ExportError
from .tokens import map_core_words

logger = logging.getLogger(__name__)


def _unet_record(config, pipeline, prompt_id, prompt, seed, tensor, path):
    m, q, n = tensor.shape
    res = config.capture.resolution
    if q != res * res:
        raise ExportError(
            f"{prompt_id}/seed={seed}: captured {q} locations, expected "
            f"{res}x{res}={res * res}"
        )
    return manifest_record(
        prompt_id=prompt_id, prompt_text=prompt, seed=seed,
        timestep_index=config.screen_step, total_steps=config.total_steps,
        model_family="unet", tensor_kind="stacked_qn", spatial=(res, res),
        token_count=n, image_token_count=None, hooked_layer=None, tensor_path=path,
    )


def _dit_record(config, pipeline, prompt_id, prompt, seed, tensor, path):
    side = tensor.shape[0]
    n = len(pipeline.token_strings(prompt))
    m = side - n
    if tensor.ndim != 2 or tensor.shape[0] != tensor.shape[1] or m < 1:
        raise ExportError(
            f"{prompt_id}/seed={seed}: joint matrix shape {tensor.shape} does not "
            f"leave room for {n} text tokens"
        )
    row_sums = tensor.astype(np.float64).sum(axis=1)
    worst = float(np.max(np.abs(row_sums - 1.0)))
    if worst > 1e-4:
        raise ExportError(
            f"{prompt_id}/seed={seed}: joint matrix rows deviate from 1 by {worst:.2e}; "
            "capture must happen after the row softmax"
        )
    return manifest_record(
        prompt_id=prompt_id, prompt_text=prompt, seed=seed,
        timestep_index=config.screen_step, total_steps=config.total_steps,
        model_family="dit", tensor_kind="dit_joint", spatial=None,
        token_count=n, image_token_count=m,
        hooked_layer=config.capture.block, tensor_path=path,
    )


def export_pool(config: ExportConfig, pipeline) -> Path:
    """Capture one tensor per (prompt, seed) and write the pool manifest.

    Returns the manifest path. When word-level annotations are configured they
    are mapped to token indices and written next to the manifest as
    annotations.json.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    annotations = []
    for index, prompt in enumerate(config.prompts):
        prompt_id = config.prompt_id(index)
        for seed in config.seeds:
            tensor = pipeline.capture_attention(prompt, seed, config)
            filename = f"{prompt_id}_seed{seed:05d}.attn"
            write_attn_tensor(tensor, out / filename)
            if config.model_family == "unet":
                records.append(_unet_record(config, pipeline, prompt_id, prompt,
                                            seed, tensor, filename))
            else:
                records.append(_dit_record(config, pipeline, prompt_id, prompt,
                                           seed, tensor, filename))
            logger.debug("captured %s seed=%s shape=%s", prompt_id, seed, tensor.shape)
        if config.words is not None:
            words = config.words.get(prompt_id) or config.words.get(prompt)
            if words is None:
                raise ExportError(f"no word annotation supplied for {prompt_id}")
            annotations.append(
                map_core_words(prompt_id, pipeline.token_strings(prompt), words)
            )
    manifest_path = write_manifest(records, out / "manifest.json")
    if annotations:
        write_annotations(annotations, out / "annotations.json")
    return manifest_path


def expected_unet_nfe(config: ExportConfig, keep: int) -> float:
    n = len(config.seeds)
    return (n * config.screen_step + keep * (config.total_steps - config.screen_step)) / keep


def expected_dit_nfe(config: ExportConfig, keep: int, total_blocks: int) -> float:
    n = len(config.seeds)
    partial = config.screen_step - 1 + config.capture.block / total_blocks
    return (n * partial + keep * (config.total_steps - config.screen_step)) / keep


def load_words_file(path: str | Path) -> dict[str, dict]:
    """Word-level annotation JSON: one object or a list with prompt_id keys."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    objs = doc if isinstance(doc, list) else [doc]
    out = {}
    for i, obj in enumerate(objs):
        key = obj.get("prompt_id", f"p{i:03d}")
        out[key] = obj
    return out
