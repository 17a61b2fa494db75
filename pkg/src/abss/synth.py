"""Synthetic attention pools with a planted seed-quality signal.

The planted model is deliberately simple so that the right answer is known by
construction: seed i (seeds are 0..N-1) draws base logits uniformly from
[0, noise_scale] via the pinned SplitMix64 stream (see rng.py), receives a
bonus of planted_gap * i / (N-1) on the core-token columns, and the logits are
then row-softmaxed into valid attention rows (each location's token row sums
to 1, like real attention). Because softmax is strictly monotone in its own
logit, the concentration score is strictly increasing in the planted bonus
whenever the noise is zero, and for planted_gap >> noise_scale the engine must
recover exactly the planted order.

Not a simulation of denoising dynamics: tensors at different timesteps are
independent re-draws with a scaled gap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attn_io import (
    AttnTensor,
    ModelFamily,
    SeedRecord,
    TensorKind,
    materialize,
    save_manifest,
)
from .errors import UsageError
from .evaluation import QualityTable
from .reference import score_dit as reference_score_dit
from .reference import score_unet as reference_score_unet
from .rng import SplitMix64
from .scoring import ScoringConfig, TokenAnnotation, TokenCategory, save_annotations

DEFAULT_TOTAL_STEPS = 50
DEFAULT_SCREEN_STEP = 10


@dataclass(frozen=True)
class SynthSpec:
    pool_size: int
    spatial: tuple[int, int] | None
    token_count: int
    core: frozenset[int]
    planted_gap: float = 0.5
    noise_scale: float = 0.01
    rng_seed: int = 0
    model_family: ModelFamily = ModelFamily.UNET
    stacked_count: int = 1
    image_tokens: int | None = None
    hooked_layer: int | None = None
    adjectives: frozenset[int] = frozenset()
    verbs: frozenset[int] = frozenset()
    prepositions: frozenset[int] = frozenset()
    prompt_id: str = "synth"
    prompt_text: str = "synthetic planted pool"
    timestep_index: int = DEFAULT_SCREEN_STEP
    total_steps: int = DEFAULT_TOTAL_STEPS

    def __post_init__(self):
        object.__setattr__(self, "core", frozenset(int(i) for i in self.core))
        object.__setattr__(self, "model_family", ModelFamily(self.model_family))
        if self.pool_size < 1:
            raise UsageError(f"pool_size must be >= 1, got {self.pool_size}")
        if self.planted_gap < 0 or self.noise_scale < 0:
            raise UsageError("planted_gap and noise_scale must be >= 0")
        if self.stacked_count < 1:
            raise UsageError(f"stacked_count must be >= 1, got {self.stacked_count}")
        n = self.token_count
        if not self.core:
            raise UsageError("core index set must be non-empty")
        for idx in self.core:
            if not (1 <= idx <= n - 2):
                raise UsageError(
                    f"core index {idx} must avoid BOS/EOS and lie in 1..{n - 2}"
                )
        if self.model_family is ModelFamily.DIT:
            if self.image_tokens is None or self.image_tokens < 1:
                raise UsageError("dit pools need image_tokens >= 1")
        else:
            if self.spatial is None or self.spatial[0] < 1 or self.spatial[1] < 1:
                raise UsageError(f"unet pools need spatial (h, w) >= 1, got {self.spatial}")
        # the annotation constructor enforces bounds and pairwise disjointness
        self.annotation()

    def annotation(self) -> TokenAnnotation:
        return TokenAnnotation(
            prompt_id=self.prompt_id,
            token_count=self.token_count,
            core=self.core,
            adjectives=self.adjectives,
            verbs=self.verbs,
            prepositions=self.prepositions,
        )

    def bonuses(self) -> list[float]:
        """Planted per-seed logit bonus, linearly spaced from 0 to planted_gap."""
        n = self.pool_size
        if n == 1:
            return [0.0]
        return [self.planted_gap * i / (n - 1) for i in range(n)]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=-1, keepdims=True)


def _unet_tensor(spec: SynthSpec, rng: SplitMix64, bonus: float) -> AttnTensor:
    h, w = spec.spatial
    m, q, n = spec.stacked_count, h * w, spec.token_count
    logits = spec.noise_scale * rng.floats(m * q * n).reshape(m, q, n)
    logits[:, :, sorted(spec.core)] += bonus
    return AttnTensor.from_array(_softmax_rows(logits).astype(np.float32))


def _dit_tensor(spec: SynthSpec, rng: SplitMix64, bonus: float) -> AttnTensor:
    m = spec.image_tokens
    side = m + spec.token_count
    logits = spec.noise_scale * rng.floats(side * side).reshape(side, side)
    logits[:m, [m + i for i in sorted(spec.core)]] += bonus
    return AttnTensor.from_array(_softmax_rows(logits).astype(np.float32))


def generate_pool(spec: SynthSpec) -> tuple[list[SeedRecord], list[int]]:
    """Build the pool's in-memory records plus the planted ground-truth order.

    One sequential rng stream covers the whole pool (seed 0 first), so the
    output is a pure function of the SynthSpec. Ground truth orders seeds by
    descending bonus, ties broken by ascending seed value.
    """
    rng = SplitMix64(spec.rng_seed)
    bonuses = spec.bonuses()
    records = []
    for seed, bonus in enumerate(bonuses):
        if spec.model_family is ModelFamily.UNET:
            tensor = _unet_tensor(spec, rng, bonus)
            kind, spatial, image_tokens, hooked = (
                TensorKind.STACKED_QN, spec.spatial, None, None,
            )
        else:
            tensor = _dit_tensor(spec, rng, bonus)
            kind, spatial, image_tokens = TensorKind.DIT_JOINT, None, spec.image_tokens
            hooked = spec.hooked_layer if spec.hooked_layer is not None else 12
        records.append(SeedRecord(
            prompt_id=spec.prompt_id,
            prompt_text=spec.prompt_text,
            seed=seed,
            timestep_index=spec.timestep_index,
            total_steps=spec.total_steps,
            model_family=spec.model_family,
            tensor_kind=kind,
            spatial=spatial,
            token_count=spec.token_count,
            image_token_count=image_tokens,
            hooked_layer=hooked,
            tensor_path=None,
            tensor=tensor,
        ))
    order = sorted(range(spec.pool_size), key=lambda s: (-bonuses[s], s))
    return records, order


def planted_quality(spec: SynthSpec) -> QualityTable:
    """Quality table whose values are the planted bonuses (the ground truth)."""
    return QualityTable(
        prompt_id=spec.prompt_id,
        scores={seed: bonus for seed, bonus in enumerate(spec.bonuses())},
    )


def generate_timestep_pools(spec: SynthSpec, timesteps: Sequence[int],
                            gap_schedule: Sequence[float] | None = None,
                            ) -> dict[int, list[SeedRecord]]:
    """Independent re-draws per timestep with a scaled planted gap.

    The default schedule ramps the gap linearly up to spec.planted_gap at the
    last timestep, mimicking attention separating as denoising progresses.
    Each timestep draws from stream rng_seed + timestep.
    """
    timesteps = sorted(set(int(t) for t in timesteps))
    if len(timesteps) < 2:
        raise UsageError("need at least 2 distinct timesteps")
    if gap_schedule is None:
        gap_schedule = [
            spec.planted_gap * (i + 1) / len(timesteps) for i in range(len(timesteps))
        ]
    if len(gap_schedule) != len(timesteps):
        raise UsageError("gap_schedule must match the number of timesteps")
    pools = {}
    for timestep, gap in zip(timesteps, gap_schedule):
        step_spec = replace(
            spec,
            planted_gap=gap,
            timestep_index=timestep,
            rng_seed=spec.rng_seed + timestep,
        )
        pools[timestep], _ = generate_pool(step_spec)
    return pools


# --- frozen fixture suite ------------------------------------------------------


def _fixture_specs() -> dict[str, SynthSpec]:
    return {
        "trivial": SynthSpec(
            pool_size=3, spatial=(4, 4), token_count=8, core=frozenset({2, 3}),
            planted_gap=0.0, noise_scale=0.0, rng_seed=101, prompt_id="fixture-trivial",
        ),
        "planted-strong": SynthSpec(
            pool_size=10, spatial=(8, 8), token_count=12, core=frozenset({3, 4}),
            adjectives=frozenset({5}), verbs=frozenset({6}), prepositions=frozenset({7}),
            planted_gap=0.5, noise_scale=0.01, rng_seed=202, stacked_count=2,
            prompt_id="fixture-planted-strong",
        ),
        "noise-only": SynthSpec(
            pool_size=10, spatial=(4, 4), token_count=8, core=frozenset({2, 5}),
            planted_gap=0.0, noise_scale=1.0, rng_seed=303, prompt_id="fixture-noise-only",
        ),
        "dit-variant": SynthSpec(
            pool_size=6, spatial=None, token_count=10, core=frozenset({2, 3}),
            planted_gap=0.4, noise_scale=0.05, rng_seed=404,
            model_family=ModelFamily.DIT, image_tokens=16, hooked_layer=12,
            prompt_id="fixture-dit",
        ),
        "degenerate-shapes": SynthSpec(
            pool_size=4, spatial=(1, 6), token_count=5, core=frozenset({2}),
            planted_gap=0.3, noise_scale=0.02, rng_seed=505,
            prompt_id="fixture-degenerate",
        ),
    }


def _reference_scores(spec: SynthSpec, records: list[SeedRecord],
                      config: ScoringConfig) -> dict[int, float]:
    scores = {}
    for record in records:
        data = record.tensor.data
        if spec.model_family is ModelFamily.UNET:
            scores[record.seed] = reference_score_unet(
                data, spec.spatial, spec.core,
                beta=config.beta, kernel_radius=config.kernel_radius, sigma=config.sigma,
            )
        else:
            scores[record.seed] = reference_score_dit(
                data, spec.image_tokens, spec.core,
                kernel_radius=config.kernel_radius, sigma=config.sigma,
            )
    return scores


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def generate_fixture_suite(destination: str | Path,
                           config: ScoringConfig = ScoringConfig()) -> list[Path]:
    """Write the frozen fixture set and return the manifest paths.

    Each fixture directory holds ATTN v1 tensors, a manifest, the annotation
    file, the planted ground truth, and expected core-token scores computed by
    the naive reference scorer (not the vectorized engine). Regeneration is
    byte-identical.
    """
    destination = Path(destination)
    destination.mkdir(parents=True, exist_ok=True)
    manifest_paths = []
    for name, spec in _fixture_specs().items():
        fixture_dir = destination / name
        fixture_dir.mkdir(parents=True, exist_ok=True)
        records, order = generate_pool(spec)
        expected = _reference_scores(spec, records, config)
        disk_records = [
            materialize(record, fixture_dir, f"seed_{record.seed:04d}.attn")
            for record in records
        ]
        manifest_paths.append(save_manifest(disk_records, fixture_dir / "manifest.json"))
        save_annotations([spec.annotation()], fixture_dir / "annotations.json")
        _write_json(fixture_dir / "ground_truth.json", {
            "prompt_id": spec.prompt_id,
            "order": order,
            "planted_bonus": {str(seed): bonus for seed, bonus in enumerate(spec.bonuses())},
        })
        _write_json(fixture_dir / "expected_scores.json", {
            "prompt_id": spec.prompt_id,
            "token_category": TokenCategory.CORE.value,
            "config": config.to_json(),
            "source": "reference",
            "scores": {str(seed): expected[seed] for seed in sorted(expected)},
        })
        _write_json(fixture_dir / "quality.json", planted_quality(spec).to_json())
    return manifest_paths


def expected_top_k(order: Sequence[int], k: int) -> list[int]:
    return list(order[:k])


def null_overlap_estimate(spec: SynthSpec, runs: int, top_k: int = 3,
                          config: ScoringConfig = ScoringConfig()) -> float:
    """Monte-Carlo mean overlap@k between scored and planted order over rng re-seeds.

    Used by the no-signal sanity check: with planted_gap 0 the scored top-k is
    an exchangeable random subset, so the expected overlap is k / pool_size.
    """
    from .scoring import score_pool  # local import to keep module load light
    from .selection import rank

    if runs < 1:
        raise UsageError(f"runs must be >= 1, got {runs}")
    total = 0.0
    annotation = spec.annotation()
    for run in range(runs):
        run_spec = replace(spec, rng_seed=spec.rng_seed + run)
        records, order = generate_pool(run_spec)
        table = score_pool(records, annotation, TokenCategory.CORE, config, threads=1)
        selected = rank(table, top_k).selected
        truth = set(order[:top_k])
        total += len(truth & set(selected)) / top_k
    return total / runs
