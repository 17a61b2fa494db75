"""Paired t-test on per-prompt metric values.

The Student-t tail probability is computed from the regularized incomplete
beta function, evaluated with the standard continued-fraction expansion
(modified Lentz iteration). The implementation is deliberately self-contained;
the test suite cross-checks it against scipy on a grid of (t, df).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .errors import DegenerateSampleError, UsageError

_EPS = 3e-16
_TINY = 1e-300
_MAX_ITER = 400


@dataclass(frozen=True)
class PairedSamples:
    """Aligned per-prompt metric values for two methods."""

    a: tuple[float, ...]
    b: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if len(self.a) != len(self.b):
            raise UsageError(
                f"paired samples must align: got lengths {len(self.a)} and {len(self.b)}"
            )
        if len(self.a) < 2:
            raise UsageError(f"need at least 2 pairs, got {len(self.a)}")
        for name, values in (("a", self.a), ("b", self.b)):
            for x in values:
                if not math.isfinite(x):
                    raise UsageError(f"sample '{name}' contains a non-finite value {x!r}")

    def differences(self) -> list[float]:
        return [x - y for x, y in zip(self.a, self.b)]


class TTestResult(NamedTuple):
    t_stat: float
    p_value: float
    df: int


def _beta_cont_frac(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz iteration."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + num / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + num / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed to converge for "
                          f"a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise UsageError(f"incomplete beta requires a, b > 0, got a={a}, b={b}")
    if not (0.0 <= x <= 1.0):
        raise UsageError(f"incomplete beta requires x in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # the continued fraction converges fast for x below the distribution mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_frac(a, b, x) / a
    return 1.0 - front * _beta_cont_frac(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: int) -> float:
    """P(T <= t) for a Student-t variable with df degrees of freedom."""
    if df < 1:
        raise UsageError(f"degrees of freedom must be >= 1, got {df}")
    if t == 0.0:
        return 0.5
    tail = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - 0.5 * tail if t > 0 else 0.5 * tail


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|), accurate to well below 1e-4 absolute."""
    if df < 1:
        raise UsageError(f"degrees of freedom must be >= 1, got {df}")
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(samples: PairedSamples) -> TTestResult:
    """t = mean(d) / (sd(d)/sqrt(n)) on d = a - b, with the n-1 sd and df = n-1."""
    d = samples.differences()
    n = len(d)
    if max(d) == min(d):
        raise DegenerateSampleError(
            "paired differences are all identical; the t statistic is undefined"
        )
    mean = sum(d) / n
    var = sum((x - mean) ** 2 for x in d) / (n - 1)
    t = mean / math.sqrt(var / n)
    return TTestResult(t_stat=t, p_value=student_t_two_sided_p(t, n - 1), df=n - 1)


def format_p_value(p: float, *, report_mode: bool = False) -> str | None:
    """"<0.001" below 1e-3; None above 0.15 in report mode; else three decimals."""
    if not (0.0 <= p <= 1.0):
        raise UsageError(f"p-value {p} outside [0, 1]")
    if p < 1e-3:
        return "<0.001"
    if report_mode and p > 0.15:
        return None
    return f"{p:.3f}"


def _is_label_map(obj) -> bool:
    return isinstance(obj, dict) and "values" not in obj


def load_sample_values(obj) -> tuple[float, ...]:
    """Accept a JSON array, {"values": [...]}, or a {label: value} mapping."""
    if isinstance(obj, Sequence) and not isinstance(obj, (str, bytes)):
        return tuple(float(x) for x in obj)
    if isinstance(obj, dict):
        if "values" in obj:
            return tuple(float(x) for x in obj["values"])
        return tuple(float(obj[key]) for key in sorted(obj))
    raise UsageError(f"cannot read sample values from {type(obj).__name__}")


def paired_samples_from_json(doc_a, doc_b) -> PairedSamples:
    """Build PairedSamples from two JSON documents, aligning label maps by key."""
    if _is_label_map(doc_a) and _is_label_map(doc_b):
        if set(doc_a) != set(doc_b):
            only_a = sorted(set(doc_a) - set(doc_b))
            only_b = sorted(set(doc_b) - set(doc_a))
            raise UsageError(
                f"sample labels differ: only in a {only_a}, only in b {only_b}"
            )
        keys = sorted(doc_a)
        return PairedSamples(
            a=tuple(float(doc_a[k]) for k in keys),
            b=tuple(float(doc_b[k]) for k in keys),
        )
    return PairedSamples(a=load_sample_values(doc_a), b=load_sample_values(doc_b))
