"""Time sequences produced by threshold rules on worker work, and closed forms.

Every sequence has the shape t_k = next_time(profiles, t_{k-1}, rule): the
first time at which the gradients the workers could finish since t_{k-1}
satisfy ``rule``.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .power import (HORIZON, INFINITY, Constant, PowerProfile, ScaledTrend,
                    inverse_work, snapped_ceil, snapped_floor)

L1 = 152.0          # smoothness of the chain function
GAMMA_INF = 23.0    # sup-norm bound on its gradient
DELTA0 = 12.0       # its initial gap per coordinate

DEFAULT_C1 = 1.0 / (4 * L1 * DELTA0)
DEFAULT_C2 = 1.0 / (8 * GAMMA_INF ** 2)
DEFAULT_C3 = 1.0 / 16
DEFAULT_C_PRIME = 1.0


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness L, initial gap Delta, noise variance sigma2 and target eps.

    M (Lipschitz constant) and R (distance to the solution) are only used
    by the convex regimes.
    """

    L: float = 1.0
    Delta: float = 1.0
    sigma2: float = 0.0
    eps: float = 0.1
    M: float = 1.0
    R: float = 1.0

    def __post_init__(self):
        bad = [k for k in ("L", "Delta", "eps", "M", "R") if not getattr(self, k) > 0]
        if self.sigma2 < 0:
            bad.append("sigma2")
        if bad:
            raise ValueError(f"constants must be positive: {', '.join(bad)}")


@dataclass(frozen=True)
class LowerConstants:
    c1: float = DEFAULT_C1
    c2: float = DEFAULT_C2
    c3: float = DEFAULT_C3
    c_prime: float = DEFAULT_C_PRIME


# -- threshold rules --------------------------------------------------------


@dataclass(frozen=True)
class SumCount:
    """Total number of finished gradients reaches B."""

    B: float
    scale: float = field(default=1.0, init=False)

    def satisfied(self, counts) -> bool:
        return sum(counts) >= self.B


@dataclass(frozen=True)
class HarmonicCount:
    """Harmonic mean of per-worker counts reaches H; a zero count never qualifies."""

    H: float
    scale: float = field(default=1.0, init=False)

    def satisfied(self, counts) -> bool:
        return harmonic_reaches(counts, self.H)


@dataclass(frozen=True)
class HarmonicScaled:
    """Like HarmonicCount, but counts are floor(scale * work)."""

    H: float
    scale: float

    def satisfied(self, counts) -> bool:
        return harmonic_reaches(counts, self.H)


ThresholdRule = SumCount | HarmonicCount | HarmonicScaled


def harmonic_reaches(counts, H) -> bool:
    """Exact test of harmonic_mean(counts) >= H (ties are common with integer counts)."""
    counts = list(counts)
    if any(c <= 0 for c in counts):
        return False
    return Fraction(len(counts)) >= Fraction(H) * sum(Fraction(1) / Fraction(c) for c in counts)


def harmonic_mean(counts) -> float:
    counts = list(counts)
    if any(c <= 0 for c in counts):
        return 0.0
    return len(counts) / sum(1.0 / c for c in counts)


def rule_counts(profiles: Sequence[PowerProfile], prev: float, t: float, rule) -> list:
    out = []
    for p in profiles:
        w = p.cumulative(t) - p.cumulative(prev) if t > prev else 0.0
        out.append(snapped_floor(rule.scale * w))
    return out


def next_time(profiles: Sequence[PowerProfile], prev: float, rule) -> float:
    """Smallest t >= prev at which ``rule`` holds, by bracketed bisection.

    The bracket doubles from prev + 1 until the rule holds or the horizon is
    passed (then INFINITY).  The bisection result is sharpened to the exact
    step location: counts only change when some worker's work crosses an
    integer level, so the answer is the latest such crossing among the
    counts observed at the upper end of the bracket.
    """
    if len(profiles) == 0:
        raise ValueError("at least one worker is required")
    if math.isinf(prev):
        return INFINITY

    def ok(t):
        return rule.satisfied(rule_counts(profiles, prev, t, rule))

    lo, width = prev, 1.0
    hi = prev + width
    while not ok(hi):
        lo = hi
        width *= 2.0
        hi = prev + width
        if hi > HORIZON:
            return INFINITY
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-13 * max(1.0, hi):
            break
        if ok(mid):
            hi = mid
        else:
            lo = mid
    counts = rule_counts(profiles, prev, hi, rule)
    cand = prev
    for p, c in zip(profiles, counts):
        if c > 0:
            cand = max(cand, inverse_work(p, c / rule.scale, prev))
    # snapping can make the rule hold a hair before the exact step, so cand
    # may sit just above hi; ok(cand) alone guarantees cand > lo
    if ok(cand):
        return cand
    return hi


def bound_sequence_from_rule(profiles, rule, K: int, start: float = 0.0) -> list:
    times = [float(start)]
    for _ in range(int(K)):
        times.append(next_time(profiles, times[-1], rule))
    return times


# -- named sequences --------------------------------------------------------

BOUND_KINDS = (
    "rennala_upper", "malenia_upper", "homog_lower", "heter_lower", "heter_lower_log",
    "convex_nonsmooth_homog", "convex_nonsmooth_heter",
    "convex_smooth_homog", "convex_smooth_heter",
)


def iterations_needed(regime: str, consts: ProblemConstants) -> int:
    """Iteration counts of the batched SGD methods in each regime."""
    c = consts
    if regime == "nonconvex":
        return snapped_ceil(24 * c.L * c.Delta / c.eps)
    if regime == "convex_nonsmooth":
        return snapped_ceil(2 * c.M ** 2 * c.R ** 2 / c.eps ** 2)
    if regime == "convex_smooth":
        return snapped_ceil(8 * math.sqrt(c.L) * c.R / math.sqrt(c.eps))
    raise ValueError(f"unknown regime {regime!r}")


def rule_for(kind: str, n: int, consts: ProblemConstants, lower=None):
    """Return (rule, K) for a named sequence kind."""
    c = consts
    lc = lower or LowerConstants()
    if kind == "rennala_upper":
        return SumCount(max(snapped_ceil(c.sigma2 / c.eps), 1)), iterations_needed("nonconvex", c)
    if kind == "malenia_upper":
        return HarmonicCount(max(2 * c.sigma2 / (n * c.eps), 1.0)), iterations_needed("nonconvex", c)
    if kind.startswith("convex_"):
        regime = "convex_nonsmooth" if "nonsmooth" in kind else "convex_smooth"
        if regime == "convex_nonsmooth":
            s = snapped_ceil(c.sigma2 / c.M ** 2)
        else:
            s = snapped_ceil(c.sigma2 * c.R / (c.eps ** 1.5 * math.sqrt(c.L)))
        K = iterations_needed(regime, c)
        if kind.endswith("_homog"):
            return SumCount(max(s, 1)), K
        return HarmonicCount(max(s, n) / n), K
    if kind in ("homog_lower", "heter_lower", "heter_lower_log"):
        ratio = c.L * c.Delta / c.eps
        if not c.eps < lc.c_prime * c.L * c.Delta:
            raise ValueError("lower bounds need eps < c_prime * L * Delta")
        if kind == "homog_lower":
            B = snapped_ceil(lc.c2 * max(snapped_ceil(c.sigma2 / c.eps), 1))
            return SumCount(max(B, 1)), int(snapped_floor(lc.c1 * ratio))
        H = max(lc.c2 * c.sigma2 / (n * c.eps), 1.0)
        if kind == "heter_lower":
            return HarmonicScaled(H, lc.c3), int(snapped_floor(lc.c1 * ratio))
        log_r = math.log(ratio)
        if log_r <= 0:
            raise ValueError("the log-factor sequence needs L * Delta / eps > 1")
        return HarmonicScaled(H, lc.c3 / log_r), int(snapped_floor(lc.c1 * ratio / log_r))
    raise ValueError(f"unknown bound kind {kind!r}")


def bound_sequence(profiles: Sequence[PowerProfile], consts: ProblemConstants, kind: str,
                   lower: LowerConstants | None = None, K: int | None = None) -> list:
    """Times t_0 = 0, t_1, ..., t_K of the named sequence.

    Passing ``K`` overrides the default iteration count of the kind.
    """
    if len(profiles) == 0:
        raise ValueError("at least one worker is required")
    rule, K0 = rule_for(kind, len(profiles), consts, lower)
    return bound_sequence_from_rule(profiles, rule, K0 if K is None else K)


# -- closed forms -----------------------------------------------------------


def prefix_min(v_desc, S: float):
    """Minimise g(j) = (v_1 + ... + v_j)^{-1} (S + j) over j for speeds sorted descending.

    Returns (j_small, j_large, value): the smallest and largest minimisers
    (1-based) and the minimum.
    """
    v = np.asarray(v_desc, dtype=float)
    if np.any(np.diff(v) > 0):
        raise ValueError("speeds must be sorted in descending order")
    j = np.arange(1, len(v) + 1)
    with np.errstate(divide="ignore"):
        g = (S + j) / np.cumsum(v)
    best = g.min()
    close = np.flatnonzero(g <= best * (1 + 1e-12))
    return int(close[0] + 1), int(close[-1] + 1), float(best)


def delta_homog(v, sigma2_over_eps: float, c: float = 1.0) -> float:
    """c * min_j (sum of the j largest speeds)^{-1} (sigma2/eps + j)."""
    v = np.sort(np.asarray(v, dtype=float))[::-1]
    return c * prefix_min(v, sigma2_over_eps)[2]


def delta_heter(v, sigma2_over_n_eps: float, c: float = 1.0) -> float:
    """c * (max_i 1/v_i + mean_i(1/v_i) * sigma2 / (n eps))."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("speeds must be positive")
    inv = 1.0 / v
    return c * (inv.max() + inv.mean() * sigma2_over_n_eps)


def _rennala_time(speeds, LD_eps: float, sig_eps: float) -> float:
    v = np.sort(np.asarray(speeds, dtype=float))[::-1]
    m = np.arange(1, len(v) + 1)
    with np.errstate(divide="ignore"):
        vals = (m / np.cumsum(v)) * (LD_eps + LD_eps * sig_eps / m)
    return float(vals.min())


def closed_form(model: str, profiles: Sequence[PowerProfile], consts: ProblemConstants) -> float:
    """Closed-form time complexities, up to universal constants.

    fixed_homog, trend_homog and outage_homog give the total time;
    fixed_heter gives the time of one iteration.
    """
    c = consts
    LD_eps = c.L * c.Delta / c.eps
    sig_eps = c.sigma2 / c.eps
    if model == "fixed_homog":
        return _rennala_time([_const_speed(p) for p in profiles], LD_eps, sig_eps)
    if model == "trend_homog":
        if not all(isinstance(p, ScaledTrend) for p in profiles):
            raise ValueError("trend_homog needs ScaledTrend profiles")
        trends = {p.trend for p in profiles}
        if len(trends) != 1:
            raise ValueError("trend_homog needs a shared trend")
        base = _rennala_time([p.v for p in profiles], LD_eps, sig_eps)
        return trends.pop().inverse(base)
    if model == "outage_homog":
        speeds = []
        for p in profiles:
            if not hasattr(p, "period") or p.active_len != 1:
                raise ValueError("outage_homog needs PeriodicOutage profiles with unit activity")
            speeds.append(p.v / p.period)
        return _rennala_time(speeds, LD_eps, sig_eps)
    if model == "fixed_heter":
        speeds = [_const_speed(p) for p in profiles]
        return delta_heter(speeds, sig_eps / len(speeds))
    raise ValueError(f"unknown closed-form model {model!r}")


def _const_speed(p) -> float:
    if not isinstance(p, Constant):
        raise ValueError("this closed form needs Constant profiles")
    return p.v


def baseline_time(method: str, taus, consts: ProblemConstants) -> float:
    """Reference times of classical methods for fixed per-gradient times taus (O-constant 1)."""
    tau = np.asarray(taus, dtype=float)
    c = consts
    n = len(tau)
    LD_eps = c.L * c.Delta / c.eps
    if method == "minibatch":
        return float(tau.max() * (LD_eps + c.sigma2 * LD_eps / (n * c.eps)))
    if method == "async":
        return float((1.0 / np.mean(1.0 / tau)) * (LD_eps + c.sigma2 * LD_eps / (n * c.eps)))
    if method == "rennala_fixed":
        return _rennala_time(1.0 / tau, LD_eps, c.sigma2 / c.eps)
    raise ValueError(f"unknown baseline {method!r}")
