"""Replicate-run statistics: means, t-based confidence intervals, two-sample
Student's t-tests, and Holm-Bonferroni family-wise correction.

Everything here operates on small samples (one value per training replicate,
typically n=6), so the kernels favour clarity and accuracy over throughput.
The t CDF is computed from the regularized incomplete beta function using a
continued-fraction evaluation; quantiles come from bisection on the CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class SampleSet:
    """One value per replicate run, plus a label for reporting."""

    values: list[float]
    label: str = ""

    def __post_init__(self) -> None:
        if len(self.values) < 2:
            raise ValueError(f"SampleSet {self.label!r} needs n >= 2, got {len(self.values)}")

    @property
    def n(self) -> int:
        return len(self.values)


@dataclass
class TTestResult:
    label_a: str
    label_b: str
    t_statistic: float
    degrees_of_freedom: int
    p_value: float


@dataclass
class ComparisonReport:
    """A family of pairwise tests corrected together."""

    pairs: list[TTestResult]
    alpha: float = 0.05
    holm_thresholds: list[float] = field(default_factory=list)
    significant: list[bool] = field(default_factory=list)


def mean_var(s: SampleSet) -> tuple[float, float]:
    """Sample mean and unbiased (n-1 denominator) variance."""
    n = s.n
    m = math.fsum(s.values) / n
    var = math.fsum((v - m) ** 2 for v in s.values) / (n - 1)
    return m, var


# --- regularized incomplete beta / Student's t CDF -------------------------

_MAX_CF_ITER = 300
_CF_EPS = 1e-15
_CF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta, modified Lentz's method.
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_CF_ITER + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed to converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # Use the continued fraction on whichever tail converges fast.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(x: float, df: int) -> float:
    """CDF of Student's t distribution with df >= 1 degrees of freedom."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if x != x:
        raise ValueError("x is NaN")
    if x == 0.0:
        return 0.5
    if math.isinf(x):
        return 1.0 if x > 0 else 0.0
    z = df / (df + x * x)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, z)
    return 1.0 - tail if x > 0 else tail


def t_quantile(p: float, df: int) -> float:
    """Inverse of t_cdf via bisection, good to ~1e-12."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, df)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("t_quantile bracket exploded")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def confidence_interval_95(s: SampleSet) -> tuple[float, float]:
    """mean +/- t_{0.975, n-1} * sd / sqrt(n)."""
    m, var = mean_var(s)
    half = t_quantile(0.975, s.n - 1) * math.sqrt(var / s.n)
    return m - half, m + half


def sd_from_ci_halfwidth(halfwidth: float, n: int) -> float:
    """Invert a reported 95% CI half-width back to the sample sd.

    Checking utility for published mean/CI tables: with n replicates,
    halfwidth = t_{0.975, n-1} * sd / sqrt(n).
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    return halfwidth * math.sqrt(n) / t_quantile(0.975, n - 1)


def students_t_test(a: SampleSet, b: SampleSet) -> TTestResult:
    """Two-sample, two-sided, pooled-variance Student's t-test.

    Degenerate rule: when the pooled variance is exactly zero the test is
    decided by the means alone (p=1 if equal, p=0 otherwise).
    """
    ma, va = mean_var(a)
    mb, vb = mean_var(b)
    na, nb = a.n, b.n
    df = na + nb - 2
    pooled = ((na - 1) * va + (nb - 1) * vb) / df
    if pooled == 0.0:
        if ma == mb:
            return TTestResult(a.label, b.label, 0.0, df, 1.0)
        t = math.inf if ma > mb else -math.inf
        return TTestResult(a.label, b.label, t, df, 0.0)
    t = (ma - mb) / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    p = 2.0 * (1.0 - t_cdf(abs(t), df))
    return TTestResult(a.label, b.label, t, df, p)


def holm_bonferroni(p_values: list[float], alpha: float = 0.05) -> tuple[list[float], list[bool]]:
    """Step-down Holm-Bonferroni correction.

    Returns the ascending threshold list alpha/(m-k+1), k=1..m, and one
    significance flag per input p-value (input order preserved). Rejection
    walks the sorted p-values and stops at the first one that is not
    strictly below its threshold; everything after it is non-significant.
    """
    m = len(p_values)
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value out of range: {p}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha out of range: {alpha}")
    thresholds = [alpha / (m - k) for k in range(m)]
    flags = [False] * m
    order = sorted(range(m), key=lambda i: p_values[i])
    for rank, idx in enumerate(order):
        if p_values[idx] < thresholds[rank]:
            flags[idx] = True
        else:
            break
    return thresholds, flags


def compare_family(samples: dict[str, SampleSet], alpha: float = 0.05) -> ComparisonReport:
    """All pairwise t-tests among the given labelled samples, Holm-corrected
    as one family (insertion order of `samples` fixes the pair order)."""
    labels = list(samples)
    pairs: list[TTestResult] = []
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            pairs.append(students_t_test(samples[labels[i]], samples[labels[j]]))
    thresholds, flags = holm_bonferroni([p.p_value for p in pairs], alpha)
    return ComparisonReport(pairs=pairs, alpha=alpha, holm_thresholds=thresholds, significant=flags)
