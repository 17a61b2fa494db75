"""Acceptance suite: one test per release criterion, at its stated tolerance.

Each criterion prints one PASS/FAIL line (run with -s to see them live).
"""

import io
import json
import shutil
import struct
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import stats as scipy_stats

from abss import reference
from abss.attn_io import AttnTensor, read_tensor, write_tensor
from abss.evaluation import ndcg, overlap_rate
from abss.scoring import ScoringConfig, score_dit, score_pool, score_unet, sharpen, smooth_2d
from abss.scoring import gaussian_kernel_1d, gaussian_kernel_2d
from abss.selection import nfe_baseline, nfe_dit, nfe_unet, rank
from abss.stats import PairedSamples, paired_t_test
from abss.synth import SynthSpec, generate_pool, null_overlap_estimate, planted_quality

from conftest import invoke


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


def test_nfe_reproduction():
    with criterion("nfe-reproduction"):
        assert nfe_unet(10, 3, 10, 50) == pytest.approx(73.33, abs=0.01)
        assert nfe_dit(10, 3, 10, 50, 12, 30) == pytest.approx(71.33, abs=0.01)
        golden = nfe_baseline("golden", V=100, N=10, T=50, k=3).nfe_per_image
        ns = nfe_baseline("ns", N=10, T=50, T_inv=50, k=3).nfe_per_image
        assert round(golden, 1) == 216.7
        assert round(ns, 1) == 333.3


def _random_unet_case(gen, maximal=False):
    if maximal:
        m, h, w, n = 8, 32, 32, 77
    else:
        m = int(gen.integers(1, 9))
        h = int(gen.integers(1, 33))
        w = int(gen.integers(1, 33))
        n = int(gen.integers(3, 78))
    stacked = gen.random((m, h * w, n), dtype=np.float32)
    size = int(gen.integers(1, min(4, n - 1)))
    token_set = {int(i) for i in gen.choice(np.arange(1, n - 1), size=size, replace=False)}
    return stacked, (h, w), token_set


def _random_dit_case(gen, maximal=False):
    if maximal:
        m, n = 1123, 77
    else:
        m = int(gen.integers(1, 601))
        n = int(gen.integers(3, 78))
    raw = gen.random((m + n, m + n), dtype=np.float64) + 0.01
    joint = (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)
    size = int(gen.integers(1, min(4, n - 1)))
    token_set = {int(i) for i in gen.choice(np.arange(1, n - 1), size=size, replace=False)}
    return joint, m, token_set


def test_oracle_equivalence():
    with criterion("oracle-equivalence"):
        gen = np.random.default_rng(2024)
        config = ScoringConfig()
        for case in range(100):
            stacked, spatial, token_set = _random_unet_case(gen, maximal=(case == 0))
            engine = score_unet(stacked, spatial, None, token_set, config)
            naive = reference.score_unet(stacked, spatial, token_set)
            assert abs(engine - naive) <= 1e-6 * abs(naive), (case, spatial)
        for case in range(100):
            joint, m, token_set = _random_dit_case(gen, maximal=(case == 0))
            engine = score_dit(joint, m, None, token_set, config)
            naive = reference.score_dit(joint, m, token_set)
            assert abs(engine - naive) <= 1e-6 * abs(naive), (case, m)


def test_softmax_and_kernel_invariants():
    with criterion("softmax-kernel-invariants"):
        gen = np.random.default_rng(99)
        for _ in range(20):
            shape = (int(gen.integers(1, 9)), int(gen.integers(1, 9)), int(gen.integers(2, 40)))
            out = sharpen(gen.random(shape), float(gen.uniform(1, 300)))
            assert np.max(np.abs(out.sum(axis=-1) - 1.0)) < 1e-6
        for _ in range(10):
            radius = int(gen.integers(0, 5))
            sigma = float(gen.uniform(0.2, 4.0))
            k2 = gaussian_kernel_2d(radius, sigma)
            k1 = gaussian_kernel_1d(radius, sigma)
            assert abs(k2.sum() - 1.0) < 1e-9 and abs(k1.sum() - 1.0) < 1e-9
            assert np.array_equal(k2, k2[::-1, :]) and np.array_equal(k2, k2[:, ::-1])
            assert np.array_equal(k2, k2.T) and np.array_equal(k1, k1[::-1])
        for _ in range(10):
            field = gen.random((int(gen.integers(1, 12)), int(gen.integers(1, 12))))
            out = smooth_2d(field, gaussian_kernel_2d(1, 1.0))
            assert np.all(out >= field.min()) and np.all(out <= field.max())
        constant = np.full((5, 7), 0.4242)
        assert np.array_equal(smooth_2d(constant, gaussian_kernel_2d(2, 1.5)), constant)


def test_planted_signal_recovery():
    with criterion("planted-signal-recovery"):
        for run in range(50):
            spec = SynthSpec(pool_size=10, spatial=(4, 4), token_count=8,
                             core=frozenset({2, 3}), planted_gap=0.5,
                             noise_scale=0.01, rng_seed=1000 + run)
            records, order = generate_pool(spec)
            table = score_pool(records, spec.annotation(), "core", threads=1)
            result = rank(table, 3)
            assert list(result.selected) == order[:3], run
            assert overlap_rate(list(result.selected), order[:3]) == 1.0
            assert ndcg(list(result.seeds()), planted_quality(spec)).value == 1.0, run
        null_spec = SynthSpec(pool_size=10, spatial=(2, 2), token_count=6,
                              core=frozenset({2, 3}), planted_gap=0.0,
                              noise_scale=1.0, rng_seed=5000)
        mean = null_overlap_estimate(null_spec, runs=1000)
        assert mean == pytest.approx(0.30, abs=0.05)


def test_statistics_correctness():
    with criterion("statistics-correctness"):
        result = paired_t_test(PairedSamples(a=(1.0, -1.0, 2.0, 0.0),
                                             b=(0.0, 0.0, 0.0, 0.0)))
        assert result.t_stat == pytest.approx(0.7746, abs=1e-3)
        assert result.df == 3
        assert result.p_value == pytest.approx(0.4950, abs=1e-3)
        ref = scipy_stats.ttest_1samp([1.0, -1.0, 2.0, 0.0], 0.0)
        assert result.p_value == pytest.approx(float(ref.pvalue), abs=1e-4)

        gen = np.random.default_rng(314)
        checked = 0
        while checked < 200:
            n = int(gen.integers(2, 60))
            d = gen.normal(scale=gen.uniform(0.05, 5.0), size=n) + gen.uniform(-2, 2)
            if np.ptp(d) == 0:
                continue
            ours = paired_t_test(PairedSamples(a=tuple(d), b=tuple(np.zeros(n))))
            ref_p = float(scipy_stats.ttest_1samp(d, 0.0).pvalue)
            assert ours.p_value == pytest.approx(ref_p, abs=1e-4)
            checked += 1


def test_determinism_and_format(tmp_path, fixture_suite):
    with criterion("determinism-and-format"):
        # byte-identical score/rank outputs across repeated runs and thread counts
        pool = tmp_path / "pool"
        assert invoke(["synth", "pool", "--out", str(pool), "--rng", "7"]).code == 0
        outputs = []
        for label, threads in (("r1", "1"), ("r2", "4"), ("r3", "1"), ("r4", "0")):
            scores = tmp_path / f"scores_{label}.json"
            ranking = tmp_path / f"rank_{label}.json"
            env = {"ABSS_THREADS": threads}
            assert invoke(["score", "--manifest", str(pool / "manifest.json"),
                           "--annotations", str(pool / "annotations.json"),
                           "--out", str(scores)], env=env).code == 0
            assert invoke(["rank", "--scores", str(scores), "--k", "3",
                           "--out", str(ranking)], env=env).code == 0
            outputs.append((scores.read_bytes(), ranking.read_bytes()))
        assert all(pair == outputs[0] for pair in outputs[1:])

        # ATTN v1 round-trip is bit-exact
        gen = np.random.default_rng(11)
        for _ in range(20):
            shape = tuple(int(gen.integers(1, 7)) for _ in range(int(gen.integers(1, 4))))
            tensor = AttnTensor.from_array(gen.random(shape, dtype=np.float32) * 5)
            buf = io.BytesIO()
            write_tensor(tensor, buf)
            buf.seek(0)
            back = read_tensor(buf)
            assert back.shape == tensor.shape
            assert back.data.tobytes() == tensor.data.tobytes()

        # the three corrupted fixtures are rejected with their documented diagnostics
        dest, _ = fixture_suite
        broken1 = tmp_path / "broken-truncated"
        shutil.copytree(dest / "trivial", broken1)
        victim = broken1 / "seed_0001.attn"
        victim.write_bytes(victim.read_bytes()[:-7])
        result = invoke(["validate", str(broken1 / "manifest.json")])
        assert result.code == 1 and "expected" in result.stderr and "seed=1" in result.stderr

        broken2 = tmp_path / "broken-shape"
        shutil.copytree(dest / "trivial", broken2)
        manifest = broken2 / "manifest.json"
        doc = json.loads(manifest.read_text())
        doc["records"][0]["token_count"] = 9
        manifest.write_text(json.dumps(doc))
        result = invoke(["validate", str(manifest)])
        assert result.code == 1 and "does not match" in result.stderr

        broken3 = tmp_path / "broken-rowsum"
        shutil.copytree(dest / "dit-variant", broken3)
        from abss.attn_io import load_tensor, save_tensor
        victim = broken3 / "seed_0000.attn"
        data = load_tensor(victim).data.copy()
        data.flags.writeable = True
        data[2, :] *= 1.2
        save_tensor(AttnTensor.from_array(data), victim)
        result = invoke(["validate", str(broken3 / "manifest.json")])
        assert result.code == 1 and "sums to" in result.stderr


def test_evaluation_example():
    with criterion("ndcg-hand-example"):
        value = ndcg(["b", "a", "c"], {"a": 3, "b": 2, "c": 1}).value
        assert value == pytest.approx(0.9225, abs=0.0005)
