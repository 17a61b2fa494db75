"""Ranking-agreement metrics and experiment drivers.

Quality scores (HPS and friends) arrive from outside as opaque numbers; this
module only compares the engine's seed ordering against them. NDCG defaults to
linear gain over the full list and overlap defaults to the top-3 prefix; both
are parameterized because the exact protocol varies between reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .attn_io import SeedRecord
from .errors import UsageError
from .rng import SplitMix64
from .scoring import ScoreTable, ScoringConfig, TokenAnnotation, TokenCategory, score_pool
from .selection import rank

DEFAULT_OVERLAP_K = 3


@dataclass(frozen=True)
class QualityTable:
    """Externally supplied per-seed quality scores for one prompt (higher = better)."""

    prompt_id: str
    scores: Mapping[int, float]

    def __post_init__(self):
        if not self.scores:
            raise UsageError(f"quality table for {self.prompt_id} is empty")
        clean = {}
        for seed, value in self.scores.items():
            value = float(value)
            if not math.isfinite(value):
                raise UsageError(
                    f"quality table for {self.prompt_id}: seed {seed} has non-finite value"
                )
            clean[int(seed)] = value
        object.__setattr__(self, "scores", dict(sorted(clean.items())))

    def top_seeds(self, k: int) -> list[int]:
        """Highest-quality k seeds, ties broken by ascending seed value."""
        ordered = sorted(self.scores.items(), key=lambda item: (-item[1], item[0]))
        return [seed for seed, _ in ordered[:k]]

    def to_json(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "scores": {str(seed): value for seed, value in self.scores.items()},
        }


def load_quality(path: str | Path) -> dict[str, QualityTable]:
    """Load one quality-table object or a list of them, keyed by prompt_id."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    objs = doc if isinstance(doc, list) else [doc]
    tables: dict[str, QualityTable] = {}
    for obj in objs:
        for key in ("prompt_id", "scores"):
            if key not in obj:
                raise UsageError(f"{path}: quality table missing field '{key}'")
        table = QualityTable(
            prompt_id=str(obj["prompt_id"]),
            scores={int(seed): float(v) for seed, v in obj["scores"].items()},
        )
        if table.prompt_id in tables:
            raise UsageError(f"{path}: duplicate quality table for prompt '{table.prompt_id}'")
        tables[table.prompt_id] = table
    return tables


def overlap_rate(predicted_topk: Sequence[int], truth_topk: Sequence[int]) -> float:
    """Fraction of seeds the two same-length top-K lists share."""
    if len(predicted_topk) != len(truth_topk):
        raise UsageError(
            f"top-K lists must have equal length, got {len(predicted_topk)} "
            f"and {len(truth_topk)}"
        )
    if not predicted_topk:
        raise UsageError("top-K lists must be non-empty")
    for name, seeds in (("predicted", predicted_topk), ("truth", truth_topk)):
        if len(set(seeds)) != len(seeds):
            raise UsageError(f"{name} top-K list contains duplicate seeds")
    return len(set(predicted_topk) & set(truth_topk)) / len(predicted_topk)


@dataclass(frozen=True)
class NdcgResult:
    value: float
    relevance_shift: float
    gain: str


def _gain(value: float, gain: str) -> float:
    if gain == "linear":
        return value
    if gain == "exponential":
        return 2.0**value - 1.0
    raise UsageError(f"unknown gain '{gain}'; expected 'linear' or 'exponential'")


def ndcg(predicted_order: Sequence[int],
         relevance: QualityTable | Mapping[int, float],
         *, gain: str = "linear") -> NdcgResult:
    """DCG(predicted)/DCG(ideal) with 1/log2(i+1) position discounts.

    Negative relevance values are shifted up by the pool minimum before use
    (NDCG needs non-negative gains); the applied shift is reported back. When
    every shifted gain is zero the metric is 1.0 by convention.
    """
    scores = relevance.scores if isinstance(relevance, QualityTable) else dict(relevance)
    predicted = list(predicted_order)
    if (len(predicted) != len(scores) or len(set(predicted)) != len(predicted)
            or set(predicted) != set(scores)):
        raise UsageError("predicted order must be a permutation of the relevance table's seeds")
    minimum = min(scores.values())
    shift = -minimum if minimum < 0 else 0.0
    gains = {seed: _gain(value + shift, gain) for seed, value in scores.items()}
    dcg = sum(gains[seed] / math.log2(i + 1) for i, seed in enumerate(predicted, start=1))
    ideal = sorted(gains.values(), reverse=True)
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, start=1))
    value = 1.0 if idcg == 0.0 else dcg / idcg
    return NdcgResult(value=value, relevance_shift=shift, gain=gain)


# --- experiment drivers -------------------------------------------------------


def _group_by_prompt(records: Sequence[SeedRecord]) -> dict[str, list[SeedRecord]]:
    groups: dict[str, list[SeedRecord]] = {}
    for record in records:
        groups.setdefault(record.prompt_id, []).append(record)
    return groups


def _quality_for(quality, prompt_id: str) -> QualityTable:
    if isinstance(quality, QualityTable):
        if quality.prompt_id != prompt_id:
            raise UsageError(
                f"quality table is for prompt '{quality.prompt_id}', records are "
                f"for '{prompt_id}'"
            )
        return quality
    if prompt_id not in quality:
        raise UsageError(f"no quality table for prompt '{prompt_id}'")
    return quality[prompt_id]


def _agreement(table: ScoreTable, truth: QualityTable, top_k: int,
               gain: str) -> tuple[float, float, list[int]]:
    if set(table.scores) != set(truth.scores):
        raise UsageError(
            f"prompt '{table.prompt_id}': scored seeds and quality seeds differ"
        )
    k = min(top_k, len(table.scores))
    result = rank(table, k)
    metric = ndcg(list(result.seeds()), truth, gain=gain)
    overlap = overlap_rate(list(result.selected), truth.top_seeds(k))
    return metric.value, overlap, list(result.selected)


@dataclass(frozen=True)
class SweepRow:
    timestep: int
    ndcg: float | None
    overlap: float | None
    prompts: int
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "timestep": self.timestep,
            "ndcg": self.ndcg,
            "overlap": self.overlap,
            "prompts": self.prompts,
            "error": self.error,
        }


def timestep_sweep(pools: Mapping[int, Sequence[SeedRecord]],
                   annotations: Mapping[str, TokenAnnotation],
                   config: ScoringConfig,
                   quality: Mapping[str, QualityTable] | QualityTable,
                   *, token_category: TokenCategory | str = TokenCategory.CORE,
                   top_k: int = DEFAULT_OVERLAP_K,
                   gain: str = "linear") -> list[SweepRow]:
    """Score each timestep's pools and compare the ranking against quality.

    A timestep whose tensors cannot be read contributes an error row instead of
    aborting the sweep. Metrics are averaged over prompts within a timestep.
    """
    if len(pools) < 2:
        raise UsageError(f"timestep sweep needs >= 2 distinct timesteps, got {len(pools)}")
    rows: list[SweepRow] = []
    for timestep in sorted(pools):
        records = pools[timestep]
        try:
            ndcg_values, overlap_values = [], []
            for prompt_id, group in sorted(_group_by_prompt(records).items()):
                table = score_pool(group, annotations, token_category, config)
                truth = _quality_for(quality, prompt_id)
                ndcg_value, overlap_value, _ = _agreement(table, truth, top_k, gain)
                ndcg_values.append(ndcg_value)
                overlap_values.append(overlap_value)
            rows.append(SweepRow(
                timestep=timestep,
                ndcg=sum(ndcg_values) / len(ndcg_values),
                overlap=sum(overlap_values) / len(overlap_values),
                prompts=len(ndcg_values),
            ))
        except Exception as exc:  # keep sweeping; report the broken timestep
            rows.append(SweepRow(timestep=timestep, ndcg=None, overlap=None,
                                 prompts=0, error=str(exc)))
    return rows


@dataclass(frozen=True)
class AblationRow:
    category: TokenCategory
    ndcg: float | None
    overlap: float | None
    mean_selected_quality: float | None
    prompts: int
    absent_prompts: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "category": self.category.value,
            "ndcg": self.ndcg,
            "overlap": self.overlap,
            "mean_selected_quality": self.mean_selected_quality,
            "prompts": self.prompts,
            "absent_prompts": list(self.absent_prompts),
        }


def token_ablation(records: Sequence[SeedRecord],
                   annotations: Mapping[str, TokenAnnotation],
                   config: ScoringConfig,
                   quality: Mapping[str, QualityTable] | QualityTable,
                   *, top_k: int = DEFAULT_OVERLAP_K,
                   categories: Iterable[TokenCategory | str] = tuple(TokenCategory),
                   gain: str = "linear") -> list[AblationRow]:
    """Run the pool scorer once per token category and tabulate the agreement.

    Prompts whose annotation lacks a category are marked absent for that row
    rather than failing the whole ablation.
    """
    groups = sorted(_group_by_prompt(records).items())
    if not groups:
        raise UsageError("token ablation needs at least one record")
    rows: list[AblationRow] = []
    for category in (TokenCategory(c) for c in categories):
        ndcg_values: list[float] = []
        overlap_values: list[float] = []
        selected_quality: list[float] = []
        absent: list[str] = []
        for prompt_id, group in groups:
            if prompt_id not in annotations:
                raise UsageError(f"no annotation for prompt '{prompt_id}'")
            if not annotations[prompt_id].category(category):
                absent.append(prompt_id)
                continue
            table = score_pool(group, annotations, category, config)
            truth = _quality_for(quality, prompt_id)
            ndcg_value, overlap_value, selected = _agreement(table, truth, top_k, gain)
            ndcg_values.append(ndcg_value)
            overlap_values.append(overlap_value)
            selected_quality.append(
                sum(truth.scores[s] for s in selected) / len(selected)
            )
        if ndcg_values:
            rows.append(AblationRow(
                category=category,
                ndcg=sum(ndcg_values) / len(ndcg_values),
                overlap=sum(overlap_values) / len(overlap_values),
                mean_selected_quality=sum(selected_quality) / len(selected_quality),
                prompts=len(ndcg_values),
                absent_prompts=tuple(absent),
            ))
        else:
            rows.append(AblationRow(
                category=category, ndcg=None, overlap=None,
                mean_selected_quality=None, prompts=0, absent_prompts=tuple(absent),
            ))
    return rows


def corrupt_annotations(annotations: Mapping[str, TokenAnnotation],
                        fraction: float, rng_seed: int) -> dict[str, TokenAnnotation]:
    """Replace the core indices of ceil(fraction * prompts) prompts with random ones.

    Replacements are drawn uniformly (without repetition) from the non-core,
    non-special indices of each chosen prompt. A replacement that lands on
    another category's index is removed from that category so the sets stay
    disjoint. Prompts with token_count <= 3, or with fewer candidates than
    core indices, are skipped with a warning. Deterministic given rng_seed.
    """
    if not (0.0 <= fraction <= 1.0):
        raise UsageError(f"fraction must lie in [0, 1], got {fraction}")
    rng = SplitMix64(rng_seed)
    prompt_ids = sorted(annotations)
    count = math.ceil(fraction * len(prompt_ids))
    rng.shuffle(prompt_ids)
    chosen = set(prompt_ids[:count])

    corrupted: dict[str, TokenAnnotation] = {}
    for prompt_id in sorted(annotations):
        annotation = annotations[prompt_id]
        if prompt_id not in chosen:
            corrupted[prompt_id] = annotation
            continue
        n = annotation.token_count
        candidates = [i for i in range(1, n - 1) if i not in annotation.core]
        if n <= 3 or len(candidates) < len(annotation.core):
            warnings.warn(
                f"prompt '{prompt_id}': too few replacement candidates "
                f"({len(candidates)} for {len(annotation.core)} core indices); skipped",
                stacklevel=2,
            )
            corrupted[prompt_id] = annotation
            continue
        new_core: set[int] = set()
        for _ in annotation.core:
            while True:
                pick = candidates[rng.next_below(len(candidates))]
                if pick not in new_core:
                    new_core.add(pick)
                    break
        corrupted[prompt_id] = TokenAnnotation(
            prompt_id=annotation.prompt_id,
            token_count=n,
            core=frozenset(new_core),
            adjectives=annotation.adjectives - new_core,
            verbs=annotation.verbs - new_core,
            prepositions=annotation.prepositions - new_core,
        )
    return corrupted


# --- report rendering ---------------------------------------------------------


def _format_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Fixed-width plain-text table."""
    cells = [[_format_cell(v) for v in row] for row in rows]
    widths = [
        max(len(h), *(len(row[i]) for row in cells)) if cells else len(h)
        for i, h in enumerate(headers)
    ]
    def line(values):
        return "  ".join(v.ljust(w) for v, w in zip(values, widths)).rstrip()
    out = [line(headers), line("-" * w for w in widths)]
    out.extend(line(row) for row in cells)
    return "\n".join(out) + "\n"


def render_csv(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def sweep_rows_for_render(rows: Sequence[SweepRow]) -> tuple[list[str], list[list]]:
    headers = ["timestep", "ndcg", "overlap", "prompts", "error"]
    return headers, [[r.timestep, r.ndcg, r.overlap, r.prompts, r.error] for r in rows]


def ablation_rows_for_render(rows: Sequence[AblationRow]) -> tuple[list[str], list[list]]:
    headers = ["category", "ndcg", "overlap", "mean_selected_quality", "prompts"]
    return headers, [
        [r.category.value, r.ndcg, r.overlap, r.mean_selected_quality, r.prompts]
        for r in rows
    ]
