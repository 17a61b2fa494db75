import math

import numpy as np
import pytest
from scipy import special, stats as scipy_stats

from abss.errors import DegenerateSampleError, UsageError
from abss.stats import (
    PairedSamples,
    format_p_value,
    paired_samples_from_json,
    paired_t_test,
    regularized_incomplete_beta,
    student_t_cdf,
    student_t_two_sided_p,
)


def test_worked_example_d_1_m1_2_0():
    # d = [1, -1, 2, 0]: mean 0.5, sample sd 1.2910, t 0.7746, df 3, p 0.4950
    samples = PairedSamples(a=(1.0, -1.0, 2.0, 0.0), b=(0.0, 0.0, 0.0, 0.0))
    result = paired_t_test(samples)
    assert result.t_stat == pytest.approx(0.7746, abs=1e-3)
    assert result.df == 3
    assert result.p_value == pytest.approx(0.4950, abs=1e-3)
    t_ref, p_ref = scipy_stats.ttest_rel(samples.a, samples.b)
    assert result.t_stat == pytest.approx(t_ref, abs=1e-12)
    assert result.p_value == pytest.approx(p_ref, abs=1e-12)


def test_incomplete_beta_matches_scipy_on_grid():
    grid_a = [0.5, 1.0, 1.5, 2.0, 5.0, 10.0, 50.0]
    grid_x = [0.0, 1e-6, 0.01, 0.2, 0.5, 0.8, 0.99, 1.0]
    for a in grid_a:
        for b in grid_a:
            for x in grid_x:
                ours = regularized_incomplete_beta(a, b, x)
                ref = float(special.betainc(a, b, x))
                assert ours == pytest.approx(ref, abs=1e-12), (a, b, x)


def test_t_cdf_matches_scipy_on_grid():
    for df in (1, 2, 3, 5, 10, 30, 100, 1000):
        for t in np.linspace(-8.0, 8.0, 33):
            ours = student_t_cdf(float(t), df)
            ref = float(scipy_stats.t.cdf(t, df))
            assert ours == pytest.approx(ref, abs=1e-6), (t, df)


def test_two_sided_p_randomized_grid_vs_scipy():
    gen = np.random.default_rng(77)
    for _ in range(200):
        n = int(gen.integers(2, 40))
        d = gen.normal(scale=gen.uniform(0.1, 3.0), size=n) + gen.uniform(-1, 1)
        if np.ptp(d) == 0:
            continue
        result = paired_t_test(PairedSamples(a=tuple(d), b=tuple(np.zeros(n))))
        p_ref = float(scipy_stats.ttest_1samp(d, 0.0).pvalue)
        assert result.p_value == pytest.approx(p_ref, abs=1e-4)


def test_antisymmetry_of_t_and_symmetry_of_p():
    a = (0.3, 0.5, 0.2, 0.9, 0.1)
    b = (0.2, 0.6, 0.1, 0.5, 0.2)
    fwd = paired_t_test(PairedSamples(a=a, b=b))
    rev = paired_t_test(PairedSamples(a=b, b=a))
    assert fwd.t_stat == pytest.approx(-rev.t_stat, abs=1e-12)
    assert fwd.p_value == pytest.approx(rev.p_value, abs=1e-12)


def test_null_behavior_small_t():
    gen = np.random.default_rng(5)
    a = gen.normal(size=400)
    result = paired_t_test(PairedSamples(a=tuple(a), b=tuple(np.zeros(400))))
    assert abs(result.t_stat) < 3.0
    assert result.p_value > 1e-3


def test_degenerate_differences_rejected():
    with pytest.raises(DegenerateSampleError):
        paired_t_test(PairedSamples(a=(1.0, 2.0, 3.0), b=(0.0, 1.0, 2.0)))


def test_sample_validation():
    with pytest.raises(UsageError, match="align"):
        PairedSamples(a=(1.0, 2.0), b=(1.0,))
    with pytest.raises(UsageError, match="at least 2"):
        PairedSamples(a=(1.0,), b=(1.0,))
    with pytest.raises(UsageError, match="non-finite"):
        PairedSamples(a=(1.0, math.nan), b=(0.0, 0.0))


def test_format_p_value_contract():
    assert format_p_value(0.0005) == "<0.001"
    assert format_p_value(0.0005, report_mode=True) == "<0.001"
    assert format_p_value(0.4950) == "0.495"
    assert format_p_value(0.4950, report_mode=True) is None
    assert format_p_value(0.16) is not None
    assert format_p_value(0.16, report_mode=True) is None
    assert format_p_value(0.05, report_mode=True) == "0.050"
    with pytest.raises(UsageError):
        format_p_value(1.5)


def test_paired_samples_from_json_label_alignment():
    a = {"p2": 0.9, "p1": 0.5}
    b = {"p1": 0.4, "p2": 0.8}
    samples = paired_samples_from_json(a, b)
    assert samples.a == (0.5, 0.9)
    assert samples.b == (0.4, 0.8)
    with pytest.raises(UsageError, match="labels differ"):
        paired_samples_from_json({"p1": 1.0, "p2": 0.0}, {"p1": 1.0, "p3": 0.0})


def test_paired_samples_from_json_arrays_and_values_key():
    samples = paired_samples_from_json([1, 2, 3], {"values": [0, 0, 0]})
    assert samples.a == (1.0, 2.0, 3.0)
    assert samples.b == (0.0, 0.0, 0.0)
