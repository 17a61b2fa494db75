import numpy as np
import pytest

from abss.attn_io import ModelFamily
from abss.errors import UsageError
from abss.selection import (
    NfeReport,
    nfe_baseline,
    nfe_dit,
    nfe_report,
    nfe_unet,
    rank,
    ranking_to_json,
)


def test_rank_basic_order_and_selection():
    result = rank({1: 0.3, 2: 0.5, 3: 0.4}, 2)
    assert result.seeds() == (2, 3, 1)
    assert result.selected == (2, 3)
    assert result.tie_breaks == ()


def test_rank_tie_prefers_smaller_seed():
    result = rank({7: 0.4, 2: 0.4}, 1)
    assert result.selected == (2,)
    assert result.tie_breaks == ((2, 7),)


def test_rank_is_permutation_with_prefix_selection():
    scores = {int(s): float(v) for s, v in enumerate(np.random.default_rng(0).random(20))}
    result = rank(scores, 5)
    assert sorted(result.seeds()) == sorted(scores)
    assert result.selected == result.seeds()[:5]
    values = [v for _, v in result.ordering]
    assert values == sorted(values, reverse=True)


def test_rank_invariant_under_increasing_transform():
    gen = np.random.default_rng(1)
    scores = {int(s): float(v) for s, v in enumerate(gen.random(15))}
    transformed = {s: 3.0 * v + 0.25 for s, v in scores.items()}
    assert rank(scores, 4).seeds() == rank(transformed, 4).seeds()


def test_rank_k_larger_than_pool_warns_and_returns_all():
    with pytest.warns(UserWarning, match="exceeds the pool size"):
        result = rank({1: 0.2, 2: 0.8}, 5)
    assert result.selected == (2, 1)


def test_rank_usage_errors():
    with pytest.raises(UsageError, match="K"):
        rank({1: 0.5}, 0)
    with pytest.raises(UsageError, match="empty"):
        rank({}, 1)


def test_planted_pool_rank_selects_planted_top3():
    from abss.scoring import score_pool
    from abss.synth import SynthSpec, generate_pool

    spec = SynthSpec(pool_size=10, spatial=(4, 4), token_count=8,
                     core=frozenset({2, 3}), planted_gap=0.5, noise_scale=0.01,
                     rng_seed=33)
    records, order = generate_pool(spec)
    table = score_pool(records, spec.annotation(), "core")
    assert rank(table, 3).selected == tuple(order[:3])


# --- NFE ---------------------------------------------------------------------


def test_nfe_unet_reference_setting():
    assert nfe_unet(10, 3, 10, 50) == pytest.approx(73.3333333, abs=1e-6)


def test_nfe_unet_no_screening_is_exactly_total():
    assert nfe_unet(10, 10, 10, 50) == 50.0
    assert nfe_unet(7, 7, 3, 20) == 20.0


def test_nfe_unet_keep_one():
    assert nfe_unet(10, 1, 10, 50) == 140.0


def test_nfe_dit_reference_setting():
    assert nfe_dit(10, 3, 10, 50, 12, 30) == pytest.approx(71.3333333, abs=1e-6)


def test_nfe_dit_full_depth_equals_unet():
    assert nfe_dit(10, 3, 10, 50, 30, 30) == nfe_unet(10, 3, 10, 50)


def test_nfe_dit_sd35_style_depth():
    assert nfe_dit(10, 3, 10, 50, 18, 38) == pytest.approx((10 * (9 + 18 / 38) + 120) / 3)


def test_nfe_monotonicity_properties():
    base = nfe_unet(10, 3, 10, 50)
    assert base >= 50.0
    assert nfe_unet(12, 3, 10, 50) > base            # increasing in N
    assert nfe_unet(10, 3, 12, 50) > base            # increasing in t when N > K
    assert nfe_dit(10, 3, 10, 50, 12, 30) < base     # truncated forward is cheaper
    assert nfe_unet(5, 5, 10, 50) == 50.0


def test_nfe_bound_errors():
    with pytest.raises(UsageError):
        nfe_unet(10, 3, 0, 50)
    with pytest.raises(UsageError):
        nfe_unet(10, 3, 51, 50)
    with pytest.raises(UsageError):
        nfe_unet(10, 11, 10, 50)
    with pytest.raises(UsageError):
        nfe_dit(10, 3, 10, 50, 31, 30)


def test_nfe_report_families():
    unet = nfe_report("unet", 10, 3, 10, 50)
    assert isinstance(unet, NfeReport)
    assert unet.nfe_per_image == pytest.approx(73.33, abs=0.01)
    dit = nfe_report(ModelFamily.DIT, 10, 3, 10, 50, 12, 30)
    assert dit.nfe_per_image == pytest.approx(71.33, abs=0.01)
    assert dit.hooked_layer == 12
    with pytest.raises(UsageError, match="l\\*"):
        nfe_report("dit", 10, 3, 10, 50)


# --- baselines ------------------------------------------------------------------


def test_baseline_golden():
    result = nfe_baseline("golden", V=100, N=10, T=50, k=3)
    assert round(result.nfe_per_image, 1) == 216.7
    assert result.flags == ("dagger",)


def test_baseline_ns():
    result = nfe_baseline("ns", N=10, T=50, T_inv=50, k=3)
    assert round(result.nfe_per_image, 1) == 333.3
    assert result.flags == ()


def test_baseline_random_is_total_steps():
    assert nfe_baseline("random", T=50).nfe_per_image == 50.0


def test_baseline_remaining_formulas():
    assert nfe_baseline("initno", R=5, S=10, T=50).nfe_per_image == 100.0
    assert nfe_baseline("ae", T=50, G=25).nfe_per_image == 75.0
    assert nfe_baseline("nd", E=10, T=50).nfe_per_image == 550.0
    assert nfe_baseline("npnet", T=50).flags == ("dagger", "star")
    assert nfe_baseline("core2", T=50).nfe_per_image == 50.0
    assert nfe_baseline("core2", T=50).flags == ("dagger", "star")


def test_baseline_caveats_surface_as_notes():
    assert "early stopping" in nfe_baseline("initno", R=5, S=10, T=50).note


def test_baseline_missing_and_unknown_params():
    with pytest.raises(UsageError, match="missing parameter"):
        nfe_baseline("golden", V=100, N=10, T=50)
    with pytest.raises(UsageError, match="unexpected"):
        nfe_baseline("random", T=50, Q=1)
    with pytest.raises(UsageError, match="unknown baseline"):
        nfe_baseline("mystery", T=50)


def test_ranking_json_shape():
    from abss.scoring import ScoreTable, ScoringConfig

    table = ScoreTable(prompt_id="p", timestep_index=10,
                       scores={1: 0.5, 2: 0.25}, config=ScoringConfig())
    doc = ranking_to_json(rank(table, 1), table, nfe_report("unet", 10, 1, 10, 50))
    assert doc["prompt_id"] == "p"
    assert doc["ranking"][0] == {"seed": 1, "score": 0.5}
    assert doc["selected"] == [1]
    assert doc["nfe"]["nfe_per_image"] == 140.0
    assert "config" in doc
