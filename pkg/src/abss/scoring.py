"""Core-token concentration scoring for U-Net and DiT attention captures.

U-Net path: stack of cross-attention maps (m, h*w, n) -> mean over the stacked
dimension -> temperature softmax along the token axis -> per-token 2D Gaussian
smoothing with reflection padding -> spatial mean -> mean over the scored
token set.

DiT path: row-stochastic joint self-attention matrix (M+N, M+N) -> mean of the
image-to-text block over image tokens -> 1D Gaussian smoothing along the token
axis -> mean over the scored token set.

All arithmetic runs in float64 regardless of the storage dtype, and every
score is a pure function of its inputs, so pools can be scored in parallel
without changing a single bit of the output.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attn_io import AttnTensor, ModelFamily, SeedRecord, TensorKind
from .errors import ShapeError, TokenIndexError, UsageError

DEFAULT_BETA = 100.0


class TokenCategory(str, Enum):
    CORE = "core"
    ADJECTIVES = "adjectives"
    VERBS = "verbs"
    PREPOSITIONS = "prepositions"


@dataclass(frozen=True)
class ScoringConfig:
    """Knobs of the concentration score.

    beta is the token-axis softmax temperature (100 in the reference setting).
    kernel_radius/sigma describe the normalized Gaussian smoother; radius 0
    degenerates smoothing to the identity. include_special_tokens permits
    scoring the BOS (index 0) and EOS (index n-1) positions.
    """

    beta: float = DEFAULT_BETA
    kernel_radius: int = 1
    sigma: float = 1.0
    include_special_tokens: bool = False

    def __post_init__(self):
        if not (self.beta > 0):
            raise UsageError(f"beta must be positive, got {self.beta}")
        if not (self.sigma > 0):
            raise UsageError(f"sigma must be positive, got {self.sigma}")
        if self.kernel_radius < 0:
            raise UsageError(f"kernel_radius must be >= 0, got {self.kernel_radius}")

    def to_json(self) -> dict:
        return {
            "beta": self.beta,
            "kernel_radius": self.kernel_radius,
            "sigma": self.sigma,
            "include_special_tokens": self.include_special_tokens,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ScoringConfig":
        return cls(
            beta=float(obj.get("beta", DEFAULT_BETA)),
            kernel_radius=int(obj.get("kernel_radius", 1)),
            sigma=float(obj.get("sigma", 1.0)),
            include_special_tokens=bool(obj.get("include_special_tokens", False)),
        )


@dataclass(frozen=True)
class TokenAnnotation:
    """Per-prompt token index sets under the prompt's own tokenization.

    Index 0 is BOS and index token_count-1 is EOS. The four category sets are
    pairwise disjoint.
    """

    prompt_id: str
    token_count: int
    core: frozenset[int]
    adjectives: frozenset[int] = frozenset()
    verbs: frozenset[int] = frozenset()
    prepositions: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "core", frozenset(int(i) for i in self.core))
        object.__setattr__(self, "adjectives", frozenset(int(i) for i in self.adjectives))
        object.__setattr__(self, "verbs", frozenset(int(i) for i in self.verbs))
        object.__setattr__(self, "prepositions", frozenset(int(i) for i in self.prepositions))
        if self.token_count < 1:
            raise UsageError(f"annotation {self.prompt_id}: token_count must be >= 1")
        seen: set[int] = set()
        for category in TokenCategory:
            indices = self.category(category)
            for idx in indices:
                if not (0 <= idx < self.token_count):
                    raise TokenIndexError(
                        f"annotation {self.prompt_id}: {category.value} index {idx} outside "
                        f"0..{self.token_count - 1}"
                    )
            if seen & indices:
                raise UsageError(
                    f"annotation {self.prompt_id}: categories overlap on indices "
                    f"{sorted(seen & indices)}"
                )
            seen |= indices

    def category(self, category: TokenCategory | str) -> frozenset[int]:
        return getattr(self, TokenCategory(category).value)

    def to_json(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "token_count": self.token_count,
            "core_tokens": sorted(self.core),
            "adjectives": sorted(self.adjectives),
            "verbs": sorted(self.verbs),
            "prepositions": sorted(self.prepositions),
        }


def _annotation_from_json(obj: Mapping, source: str) -> TokenAnnotation:
    for key in ("prompt_id", "token_count", "core_tokens"):
        if key not in obj:
            raise UsageError(f"{source}: annotation missing field '{key}'")
    return TokenAnnotation(
        prompt_id=str(obj["prompt_id"]),
        token_count=int(obj["token_count"]),
        core=frozenset(obj["core_tokens"]),
        adjectives=frozenset(obj.get("adjectives", ())),
        verbs=frozenset(obj.get("verbs", ())),
        prepositions=frozenset(obj.get("prepositions", ())),
    )


def load_annotations(path: str | Path) -> dict[str, TokenAnnotation]:
    """Load one annotation object or a list of them, keyed by prompt_id."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    objs = doc if isinstance(doc, list) else [doc]
    annotations: dict[str, TokenAnnotation] = {}
    for obj in objs:
        ann = _annotation_from_json(obj, str(path))
        if ann.prompt_id in annotations:
            raise UsageError(f"{path}: duplicate annotation for prompt '{ann.prompt_id}'")
        annotations[ann.prompt_id] = ann
    return annotations


def save_annotations(annotations: Mapping[str, TokenAnnotation] | Iterable[TokenAnnotation],
                     path: str | Path) -> Path:
    if isinstance(annotations, Mapping):
        annotations = annotations.values()
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([a.to_json() for a in annotations], fh, indent=2)
        fh.write("\n")
    return path


@dataclass(frozen=True)
class ScoreTable:
    """Per-seed concentration scores for one prompt at one timestep."""

    prompt_id: str
    timestep_index: int
    scores: Mapping[int, float]
    config: ScoringConfig
    token_category: TokenCategory = TokenCategory.CORE

    def __post_init__(self):
        if not self.scores:
            raise UsageError(f"score table for {self.prompt_id} is empty")
        clean = {}
        for seed, value in self.scores.items():
            value = float(value)
            if not (0.0 < value <= 1.0):
                raise UsageError(
                    f"score table for {self.prompt_id}: seed {seed} has score {value} "
                    "outside (0, 1]"
                )
            clean[int(seed)] = value
        object.__setattr__(self, "scores", dict(sorted(clean.items())))
        object.__setattr__(self, "token_category", TokenCategory(self.token_category))

    def to_json(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "timestep_index": self.timestep_index,
            "token_category": self.token_category.value,
            "config": self.config.to_json(),
            "scores": {str(seed): value for seed, value in self.scores.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ScoreTable":
        for key in ("prompt_id", "timestep_index", "config", "scores"):
            if key not in obj:
                raise UsageError(f"score table JSON missing field '{key}'")
        return cls(
            prompt_id=str(obj["prompt_id"]),
            timestep_index=int(obj["timestep_index"]),
            scores={int(seed): float(v) for seed, v in obj["scores"].items()},
            config=ScoringConfig.from_json(obj["config"]),
            token_category=obj.get("token_category", TokenCategory.CORE),
        )


# --- kernels and smoothing -------------------------------------------------


def gaussian_kernel_1d(radius: int, sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian taps on the integer offsets -radius..radius."""
    if radius < 0:
        raise UsageError(f"kernel radius must be >= 0, got {radius}")
    if not (sigma > 0):
        raise UsageError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def gaussian_kernel_2d(radius: int, sigma: float) -> np.ndarray:
    """Normalized (2r+1)x(2r+1) Gaussian: weights ~ exp(-(dy^2+dx^2)/(2*sigma^2))."""
    if radius < 0:
        raise UsageError(f"kernel radius must be >= 0, got {radius}")
    if not (sigma > 0):
        raise UsageError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    sq = offsets[:, None] ** 2 + offsets[None, :] ** 2
    weights = np.exp(-sq / (2.0 * sigma * sigma))
    return weights / weights.sum()


def _reflect_pad(values: np.ndarray, radius: int) -> np.ndarray:
    # numpy's "reflect" is mirror-without-border-repeat (index -1 -> 1) and
    # degenerates to replication on size-1 axes, which is exactly the contract.
    if radius == 0:
        return values
    return np.pad(values, radius, mode="reflect")


def smooth_1d(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve a vector with a normalized symmetric kernel under reflection padding."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ShapeError(f"smooth_1d expects a vector, got shape {values.shape}")
    radius = (len(kernel) - 1) // 2
    if radius == 0:
        return values * float(kernel[0])
    padded = _reflect_pad(values, radius)
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel))
    out = windows @ np.asarray(kernel, dtype=np.float64)
    # clamp float dust so convex-combination bounds hold exactly
    return np.clip(out, values.min(), values.max())


def smooth_2d(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2D convolution with reflection padding; output stays inside [min, max] of the input."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ShapeError(f"smooth_2d expects an (h, w) map, got shape {field.shape}")
    side = kernel.shape[0]
    radius = (side - 1) // 2
    if radius == 0:
        return field * float(kernel[0, 0])
    padded = _reflect_pad(field, radius)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (side, side))
    out = np.einsum("hwuv,uv->hw", windows, np.asarray(kernel, dtype=np.float64))
    return np.clip(out, field.min(), field.max())


# --- U-Net path --------------------------------------------------------------


def aggregate_unet(stacked: AttnTensor | np.ndarray, spatial: tuple[int, int]) -> AttnTensor:
    """Average the stacked (m, h*w, n) maps and reshape to (h, w, n)."""
    data = stacked.data if isinstance(stacked, AttnTensor) else np.asarray(stacked)
    if data.ndim != 3:
        raise ShapeError(f"stacked tensor must be 3D (m, h*w, n), got shape {tuple(data.shape)}")
    h, w = int(spatial[0]), int(spatial[1])
    if h < 1 or w < 1:
        raise ShapeError(f"spatial {spatial} must be >= 1 in both dimensions")
    if h * w != data.shape[1]:
        raise ShapeError(
            f"spatial {h}x{w} = {h * w} does not match the map dimension {data.shape[1]}"
        )
    mean = data.astype(np.float64, copy=False).mean(axis=0)
    return AttnTensor.from_array(mean.reshape(h, w, data.shape[2]))


def sharpen(aggregated: AttnTensor | np.ndarray, beta: float) -> np.ndarray:
    """Temperature softmax along the token (last) axis, max-subtracted for stability."""
    if not (beta > 0):
        raise UsageError(f"beta must be positive, got {beta}")
    data = aggregated.data if isinstance(aggregated, AttnTensor) else np.asarray(aggregated)
    logits = beta * data.astype(np.float64, copy=False)
    logits = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=-1, keepdims=True)


def _check_token_set(token_set: Iterable[int], token_count: int,
                     config: ScoringConfig) -> list[int]:
    indices = sorted({int(i) for i in token_set})
    if not indices:
        raise UsageError("token set is empty; nothing to score")
    for idx in indices:
        if not (0 <= idx < token_count):
            raise TokenIndexError(f"token index {idx} outside 0..{token_count - 1}")
    if not config.include_special_tokens:
        specials = {0, token_count - 1} & set(indices)
        if specials:
            raise UsageError(
                f"token set contains special-token indices {sorted(specials)} "
                "(BOS/EOS); set include_special_tokens to score them"
            )
    return indices


def _pooled_mean(sharp: np.ndarray, indices: list[int], config: ScoringConfig) -> float:
    kernel = gaussian_kernel_2d(config.kernel_radius, config.sigma)
    total = 0.0
    for idx in indices:
        total += float(smooth_2d(sharp[:, :, idx], kernel).mean())
    return total / len(indices)


def score_unet(stacked: AttnTensor | np.ndarray, spatial: tuple[int, int],
               annotation: TokenAnnotation | None, token_set: Iterable[int],
               config: ScoringConfig = ScoringConfig()) -> float:
    """Concentration of smoothed, sharpened attention mass on `token_set`.

    Chain: aggregate over the stacked dimension, temperature softmax over
    tokens, per-token 2D smoothing, spatial mean, mean over the token set.
    """
    aggregated = aggregate_unet(stacked, spatial)
    n = aggregated.shape[2]
    if annotation is not None and annotation.token_count != n:
        raise UsageError(
            f"annotation {annotation.prompt_id} declares {annotation.token_count} tokens "
            f"but the tensor has {n}"
        )
    indices = _check_token_set(token_set, n, config)
    sharp = sharpen(aggregated, config.beta)
    return _pooled_mean(sharp, indices, config)


def score_aggregated(aggregated: AttnTensor | np.ndarray,
                     annotation: TokenAnnotation | None, token_set: Iterable[int],
                     config: ScoringConfig = ScoringConfig()) -> float:
    """Same as score_unet but starting from an already aggregated (h, w, n) map."""
    data = aggregated.data if isinstance(aggregated, AttnTensor) else np.asarray(aggregated)
    if data.ndim != 3:
        raise ShapeError(f"aggregated map must be 3D (h, w, n), got shape {tuple(data.shape)}")
    n = data.shape[2]
    if annotation is not None and annotation.token_count != n:
        raise UsageError(
            f"annotation {annotation.prompt_id} declares {annotation.token_count} tokens "
            f"but the tensor has {n}"
        )
    indices = _check_token_set(token_set, n, config)
    sharp = sharpen(data, config.beta)
    return _pooled_mean(sharp, indices, config)


# --- DiT path ----------------------------------------------------------------


def score_dit(joint: AttnTensor | np.ndarray, image_token_count: int,
              annotation: TokenAnnotation | None, token_set: Iterable[int],
              config: ScoringConfig = ScoringConfig()) -> float:
    """Image-to-text attention averaged over image tokens, 1D-smoothed, set-averaged.

    `joint` is the (M+N, M+N) row-stochastic self-attention matrix with image
    tokens first; token_set indexes the N text tokens (0-based).
    """
    data = joint.data if isinstance(joint, AttnTensor) else np.asarray(joint)
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise ShapeError(f"joint matrix must be square 2D, got shape {tuple(data.shape)}")
    side = data.shape[0]
    m = int(image_token_count)
    if not (1 <= m < side):
        raise ShapeError(
            f"image_token_count {m} must leave at least one text token in a "
            f"{side}x{side} matrix"
        )
    n = side - m
    if annotation is not None and annotation.token_count != n:
        raise UsageError(
            f"annotation {annotation.prompt_id} declares {annotation.token_count} tokens "
            f"but the matrix implies {n}"
        )
    indices = _check_token_set(token_set, n, config)
    per_token = data[:m, m:].astype(np.float64, copy=False).mean(axis=0)
    smoothed = smooth_1d(per_token, gaussian_kernel_1d(config.kernel_radius, config.sigma))
    return float(smoothed[indices].mean())


# --- pool scoring ------------------------------------------------------------


def thread_count(requested: int | None = None) -> int:
    """Resolve the worker count: explicit arg, else ABSS_THREADS env (0 = auto)."""
    if requested is None:
        raw = os.environ.get("ABSS_THREADS", "0")
        try:
            requested = int(raw)
        except ValueError:
            raise UsageError(f"ABSS_THREADS must be an integer, got {raw!r}")
    if requested < 0:
        raise UsageError(f"thread count must be >= 0, got {requested}")
    if requested == 0:
        return os.cpu_count() or 1
    return requested


def score_record(record: SeedRecord, annotation: TokenAnnotation,
                 token_set: Iterable[int], config: ScoringConfig) -> float:
    """Dispatch one record to the scoring path matching its tensor kind."""
    tensor = record.load_tensor()
    record.check_shape(tensor.shape)
    if record.tensor_kind is TensorKind.STACKED_QN:
        return score_unet(tensor, record.spatial, annotation, token_set, config)
    if record.tensor_kind is TensorKind.AGGREGATED_HWN:
        return score_aggregated(tensor, annotation, token_set, config)
    return score_dit(tensor, record.image_token_count, annotation, token_set, config)


def score_pool(records: Sequence[SeedRecord],
               annotations: Mapping[str, TokenAnnotation] | TokenAnnotation,
               token_category: TokenCategory | str = TokenCategory.CORE,
               config: ScoringConfig = ScoringConfig(),
               *, threads: int | None = None) -> ScoreTable:
    """Score every seed of one prompt's pool on the requested token category.

    Records may be evaluated in parallel; results are merged by seed id, so the
    output is independent of worker count and scheduling order.
    """
    if not records:
        raise UsageError("cannot score an empty seed pool")
    category = TokenCategory(token_category)
    prompt_ids = {r.prompt_id for r in records}
    if len(prompt_ids) != 1:
        raise UsageError(f"pool mixes prompt_ids {sorted(prompt_ids)}; score one prompt at a time")
    timesteps = {r.timestep_index for r in records}
    if len(timesteps) != 1:
        raise UsageError(f"pool mixes timestep_index values {sorted(timesteps)}")
    seeds = [r.seed for r in records]
    if len(set(seeds)) != len(seeds):
        dupes = sorted({s for s in seeds if seeds.count(s) > 1})
        raise UsageError(f"pool has duplicate seeds {dupes}")
    prompt_id = records[0].prompt_id

    if isinstance(annotations, TokenAnnotation):
        annotation = annotations
    else:
        if prompt_id not in annotations:
            raise UsageError(f"no annotation for prompt '{prompt_id}'")
        annotation = annotations[prompt_id]
    token_set = annotation.category(category)
    if not token_set:
        raise UsageError(
            f"annotation for prompt '{prompt_id}' has no '{category.value}' indices"
        )

    workers = min(thread_count(threads), len(records))
    if workers <= 1:
        scores = {r.seed: score_record(r, annotation, token_set, config) for r in records}
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(
                lambda r: score_record(r, annotation, token_set, config), records
            ))
        scores = {r.seed: v for r, v in zip(records, values)}

    return ScoreTable(
        prompt_id=prompt_id,
        timestep_index=records[0].timestep_index,
        scores=scores,
        config=replace(config),
        token_category=category,
    )
