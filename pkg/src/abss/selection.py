"""Seed ranking, top-K retention, and coarse NFE accounting.

NFE counts full denoising-model forward passes per reported image. Screening N
seeds for t steps and finishing only K of them costs (N*t + K*(T-t)) / K for a
U-Net; a DiT screened with a truncated forward that stops after block l* of L
at the screening step costs (N*(t-1 + l*/L) + K*(T-t)) / K.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping

from .attn_io import ModelFamily
from .errors import UsageError
from .scoring import ScoreTable


@dataclass(frozen=True)
class RankingResult:
    """Seeds in score-descending order with the retained prefix and tie audit trail."""

    ordering: tuple[tuple[int, float], ...]
    selected: tuple[int, ...]
    k: int
    tie_breaks: tuple[tuple[int, ...], ...]

    def seeds(self) -> tuple[int, ...]:
        return tuple(seed for seed, _ in self.ordering)


def rank(table: ScoreTable | Mapping[int, float], k: int) -> RankingResult:
    """Sort seeds by descending score, ties broken by ascending seed value.

    K larger than the pool degrades gracefully: the whole pool is selected and
    a warning is emitted.
    """
    if k < 1:
        raise UsageError(f"K must be >= 1, got {k}")
    scores = table.scores if isinstance(table, ScoreTable) else dict(table)
    if not scores:
        raise UsageError("cannot rank an empty score table")
    ordering = tuple(sorted(scores.items(), key=lambda item: (-item[1], item[0])))
    if k > len(ordering):
        warnings.warn(
            f"K={k} exceeds the pool size {len(ordering)}; selecting the whole pool",
            stacklevel=2,
        )
    groups: dict[float, list[int]] = {}
    for seed, score in ordering:
        groups.setdefault(score, []).append(seed)
    tie_breaks = tuple(
        tuple(seeds) for _, seeds in sorted(groups.items(), key=lambda kv: -kv[0])
        if len(seeds) > 1
    )
    selected = tuple(seed for seed, _ in ordering[: min(k, len(ordering))])
    return RankingResult(ordering=ordering, selected=selected, k=k, tie_breaks=tie_breaks)


@dataclass(frozen=True)
class NfeReport:
    """Coarse per-reported-image cost of screened generation."""

    pool_size: int
    keep: int
    screen_step: int
    total_steps: int
    model_family: ModelFamily
    nfe_per_image: float
    hooked_layer: int | None = None
    total_layers: int | None = None

    def to_json(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "keep": self.keep,
            "screen_step": self.screen_step,
            "total_steps": self.total_steps,
            "model_family": self.model_family.value,
            "hooked_layer": self.hooked_layer,
            "total_layers": self.total_layers,
            "nfe_per_image": self.nfe_per_image,
        }


def _check_screen_bounds(n: int, k: int, t: int, total: int) -> None:
    if not (1 <= t <= total):
        raise UsageError(f"screen step t={t} outside 1..{total}")
    if not (1 <= k <= n):
        raise UsageError(f"keep K={k} outside 1..{n}")


def nfe_unet(n: int, k: int, t: int, total: int) -> float:
    """(N*t + K*(T-t)) / K: N seeds screened for t full steps, K finished."""
    _check_screen_bounds(n, k, t, total)
    return (n * t + k * (total - t)) / k


def nfe_dit(n: int, k: int, t: int, total: int, l_star: int, layers: int) -> float:
    """Truncated-forward variant: the screening step costs only l*/L of a pass."""
    _check_screen_bounds(n, k, t, total)
    if not (1 <= l_star <= layers):
        raise UsageError(f"hooked layer l*={l_star} outside 1..{layers}")
    return (n * (t - 1 + l_star / layers) + k * (total - t)) / k


def nfe_report(family: ModelFamily | str, n: int, k: int, t: int, total: int,
               l_star: int | None = None, layers: int | None = None) -> NfeReport:
    family = ModelFamily(family)
    if family is ModelFamily.UNET:
        value = nfe_unet(n, k, t, total)
        return NfeReport(n, k, t, total, family, value)
    if l_star is None or layers is None:
        raise UsageError("dit NFE needs the hooked layer l* and the total layer count L")
    value = nfe_dit(n, k, t, total, l_star, layers)
    return NfeReport(n, k, t, total, family, value, hooked_layer=l_star, total_layers=layers)


@dataclass(frozen=True)
class BaselineNfe:
    method: str
    nfe_per_image: float
    flags: tuple[str, ...]
    note: str
    params: dict

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "nfe_per_image": self.nfe_per_image,
            "flags": list(self.flags),
            "note": self.note,
            "params": dict(self.params),
        }


BASELINE_METHODS = ("random", "golden", "ns", "initno", "ae", "nd", "npnet", "core2")

# parameter symbols each baseline formula needs
_BASELINE_PARAMS = {
    "random": ("T",),
    "golden": ("V", "N", "T", "k"),
    "ns": ("N", "T", "T_inv", "k"),
    "initno": ("R", "S", "T"),
    "ae": ("T", "G"),
    "nd": ("E", "T"),
    "npnet": ("T",),
    "core2": ("T",),
}


def nfe_baseline(method: str, **params: float) -> BaselineNfe:
    """Coarse NFE of a comparison method; dagger/star caveats come back as flags.

    Symbols: T total steps, N candidate pool, k reported images per prompt,
    V validation prompts (golden), T_inv inversion steps (ns), R restart
    rounds and S optimization steps per round (initno), G guided steps (ae),
    E optimization epochs (nd).
    """
    method = method.lower()
    if method not in _BASELINE_PARAMS:
        raise UsageError(f"unknown baseline '{method}'; expected one of {BASELINE_METHODS}")
    needed = _BASELINE_PARAMS[method]
    missing = [p for p in needed if p not in params]
    if missing:
        raise UsageError(f"baseline '{method}' missing parameter(s) {missing}; needs {needed}")
    extra = [p for p in params if p not in needed]
    if extra:
        raise UsageError(f"baseline '{method}' got unexpected parameter(s) {extra}")
    v = {key: float(params[key]) for key in needed}

    if method == "random":
        return BaselineNfe("random", v["T"], (), "uniform seeds, plain T-step generation", v)
    if method == "golden":
        value = v["T"] + (v["V"] * v["N"] * v["T"]) / (v["V"] * v["k"])
        return BaselineNfe(
            "golden", value, ("dagger",),
            "validation-set seed search amortized over reported images; dagger marks "
            "the extra reward-model evaluation overhead", v,
        )
    if method == "ns":
        value = v["N"] * (v["T"] + v["T_inv"]) / v["k"]
        return BaselineNfe(
            "ns", value, (),
            "per-candidate sampling plus inversion; top candidates reported directly", v,
        )
    if method == "initno":
        value = v["R"] * v["S"] + v["T"]
        return BaselineNfe(
            "initno", value, ("dagger",),
            "upper bound: threshold-based early stopping may use fewer optimization "
            "steps; dagger marks latent-optimization overhead", v,
        )
    if method == "ae":
        value = v["T"] + v["G"]
        return BaselineNfe(
            "ae", value, ("dagger",),
            "one extra guided forward pass per early step; threshold-triggered "
            "refinement steps excluded; dagger marks latent-optimization overhead", v,
        )
    if method == "nd":
        value = v["E"] * v["T"] + v["T"]
        return BaselineNfe(
            "nd", value, ("dagger",),
            "dagger marks gradient-cache updates and outer-objective evaluation not "
            "captured by the coarse count", v,
        )
    if method == "npnet":
        return BaselineNfe(
            "npnet", v["T"], ("dagger", "star"),
            "auxiliary noise model runs once before standard generation; star marks "
            "its separate training cost, dagger the extra inference-time adjustment", v,
        )
    value = v["T"]
    return BaselineNfe(
        "core2", value, ("dagger", "star"),
        "refinement branch runs inside each denoising step without an extra full "
        "pass; star marks the trained refinement module", v,
    )


def ranking_to_json(result: RankingResult, table: ScoreTable,
                    nfe: NfeReport | None = None) -> dict:
    return {
        "prompt_id": table.prompt_id,
        "timestep_index": table.timestep_index,
        "token_category": table.token_category.value,
        "config": table.config.to_json(),
        "k": result.k,
        "ranking": [{"seed": seed, "score": score} for seed, score in result.ordering],
        "selected": list(result.selected),
        "tie_breaks": [list(group) for group in result.tie_breaks],
        "nfe": nfe.to_json() if nfe is not None else None,
    }
