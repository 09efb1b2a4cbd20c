import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetsgd.bounds import (HarmonicCount, HarmonicScaled, LowerConstants, ProblemConstants,
                           SumCount, baseline_time, bound_sequence, closed_form, delta_heter,
                           delta_homog, harmonic_mean, iterations_needed, next_time, prefix_min,
                           rule_for)
from hetsgd.power import (INFINITY, Constant, PeriodicOutage, PiecewiseConstant, ScaledTrend,
                          SineOffset)


def consts(**kw):
    base = dict(L=1.0, Delta=1.0, sigma2=0.0, eps=1.0)
    base.update(kw)
    return ProblemConstants(**base)


# -- next_time -----------------------------------------------------------------


def test_next_time_examples():
    assert next_time([Constant(1)], 0, SumCount(3)) == 3.0
    assert next_time([Constant(2), Constant(1)], 0, SumCount(3)) == 1.0
    assert next_time([Constant(2), Constant(1)], 0, HarmonicCount(2)) == 2.0


def test_next_time_requires_workers():
    with pytest.raises(ValueError):
        next_time([], 0, SumCount(1))


def test_next_time_unreachable():
    assert next_time([Constant(0)], 0, SumCount(1)) == INFINITY
    assert next_time([PiecewiseConstant((0, 1), (1, 0))], 0, SumCount(2)) == INFINITY
    # a harmonic rule needs every worker
    assert next_time([Constant(1), Constant(0)], 0, HarmonicCount(1)) == INFINITY


def test_harmonic_mean_zero_count():
    assert harmonic_mean([0, 5]) == 0.0
    assert harmonic_mean([3, 4]) == pytest.approx(24 / 7)


def _sum_oracle(v, prev, B):
    """B-th smallest arrival time among all workers' unit completions (constant speeds)."""
    arr = sorted(prev + j / vi for vi in v for j in range(1, B + 1))
    return arr[B - 1]


def _harm_oracle(v, prev, H):
    cands = sorted({prev + j / vi for vi in v for j in range(1, 400)})
    for t in cands:
        counts = [math.floor((t - prev) * vi + 1e-9) for vi in v]
        if harmonic_mean(counts) >= H - 1e-12:
            return t
    raise AssertionError("oracle range too small")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.25, 0.5, 1.0, 2.0, 3.0, 4.0]), min_size=1, max_size=5),
       st.integers(0, 100), st.integers(1, 20))
def test_next_time_sum_rule_matches_order_statistic(v, prev, B):
    t = next_time([Constant(x) for x in v], float(prev), SumCount(B))
    assert t == pytest.approx(_sum_oracle(v, prev, B), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([0.5, 1.0, 2.0, 4.0]), min_size=1, max_size=4),
       st.sampled_from([1.0, 1.5, 2.0, 3.5, 6.0]))
def test_next_time_harmonic_rule_matches_scan(v, H):
    t = next_time([Constant(x) for x in v], 0.0, HarmonicCount(H))
    assert t == pytest.approx(_harm_oracle(v, 0.0, H), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.2, 5), min_size=1, max_size=4), st.integers(1, 12),
       st.floats(0.25, 4))
def test_next_time_scales_with_speed(v, B, c):
    t1 = next_time([Constant(x) for x in v], 0, SumCount(B))
    t2 = next_time([Constant(c * x) for x in v], 0, SumCount(B))
    assert t2 == pytest.approx(t1 / c, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.2, 5), min_size=1, max_size=4), st.floats(0.1, 5), st.integers(1, 12))
def test_extra_worker_never_slows_sum_rule(v, extra, B):
    ps = [PeriodicOutage(x, 2.0, 1.0) for x in v]
    assert next_time(ps + [Constant(extra)], 0, SumCount(B)) <= next_time(ps, 0, SumCount(B))


# -- sequences -----------------------------------------------------------------


def test_rennala_upper_example():
    c = consts(eps=0.5, sigma2=1.5)
    rule, K = rule_for("rennala_upper", 1, c)
    assert (K, rule.B) == (48, 3)
    times = bound_sequence([Constant(1)], c, "rennala_upper")
    assert times == [3.0 * k for k in range(49)]


def test_malenia_upper_example():
    eps = 0.25
    c = consts(eps=eps, sigma2=2 * eps * 2 / 2)
    rule, _ = rule_for("malenia_upper", 2, c)
    assert rule.H == 2
    times = bound_sequence([Constant(1), Constant(1)], c, "malenia_upper", K=5)
    assert np.allclose(np.diff(times), 2.0, rtol=0, atol=1e-12)


def test_homog_lower_without_noise_uses_single_gradients():
    c = consts(Delta=1e5)
    rule, K = rule_for("homog_lower", 2, c)
    assert rule.B == 1
    ps = [Constant(1), Constant(0.5)]
    times = bound_sequence(ps, c, "homog_lower", K=4)
    assert times == [next_time(ps, 0, SumCount(1)) * k for k in range(5)]


def test_lower_kinds_need_small_eps():
    for kind in ("homog_lower", "heter_lower", "heter_lower_log"):
        with pytest.raises(ValueError):
            rule_for(kind, 2, consts(eps=2.0))


def test_heter_lower_constants_and_log():
    c = consts(Delta=1e6, sigma2=4.0, eps=0.5)
    lc = LowerConstants()
    rule, K = rule_for("heter_lower", 2, c)
    assert isinstance(rule, HarmonicScaled)
    assert rule.scale == lc.c3
    assert K == math.floor(lc.c1 * 2e6)
    rule_log, K_log = rule_for("heter_lower_log", 2, c)
    assert rule_log.scale == pytest.approx(lc.c3 / math.log(2e6))
    assert K_log == math.floor(lc.c1 * 2e6 / math.log(2e6))


def test_default_lower_constants():
    lc = LowerConstants()
    assert lc.c1 == pytest.approx(1 / 7296)
    assert lc.c2 == pytest.approx(1 / 4232)
    assert lc.c3 == 1 / 16


def test_convex_kinds_use_method_batch():
    c = ProblemConstants(L=1, Delta=1, sigma2=9, eps=1, M=1, R=1)
    rule, K = rule_for("convex_nonsmooth_homog", 3, c)
    assert (rule.B, K) == (9, 2)
    rule, K = rule_for("convex_nonsmooth_heter", 3, c)
    assert rule.H == 3
    rule, K = rule_for("convex_smooth_homog", 3, c)
    assert (rule.B, K) == (9, 8)


def test_unknown_kind():
    with pytest.raises(ValueError):
        rule_for("nope", 1, consts())


def test_iterations_needed_examples():
    assert iterations_needed("nonconvex", ProblemConstants(L=1, Delta=1, eps=0.01)) == 2400
    assert iterations_needed("convex_nonsmooth", ProblemConstants(M=1, R=1, eps=1)) == 2
    assert iterations_needed("convex_smooth", ProblemConstants(L=4, R=1, eps=4)) == 8


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["rennala_upper", "malenia_upper"]), st.floats(0.0, 20.0),
       st.integers(1, 3))
def test_sequences_nondecreasing(kind, sigma2, n):
    ps = [PeriodicOutage(1.0 + i, 2.0 + i, 1.0) for i in range(n)]
    t = bound_sequence(ps, consts(sigma2=sigma2), kind, K=10)
    assert all(b > a for a, b in zip(t, t[1:]))


# -- closed forms --------------------------------------------------------------


def test_prefix_min_example():
    assert prefix_min([3, 2, 1], 2) == (2, 2, pytest.approx(0.8))
    with pytest.raises(ValueError):
        prefix_min([1, 2], 1)


def test_closed_form_examples():
    assert closed_form("fixed_homog", [Constant(1), Constant(1)], consts(sigma2=4)) == 3
    assert closed_form("fixed_heter", [Constant(1), Constant(1)], consts()) == 1
    with pytest.raises(ValueError):
        closed_form("fixed_heter", [Constant(1), Constant(0)], consts())


def test_trend_closed_form_is_inverse_of_fixed():
    trend = SineOffset(1.01, 1.0)
    c = consts(sigma2=3, eps=0.5)
    fixed = closed_form("fixed_homog", [Constant(2), Constant(1)], c)
    t = closed_form("trend_homog", [ScaledTrend(2, trend), ScaledTrend(1, trend)], c)
    assert trend.integral(t) == pytest.approx(fixed, rel=1e-9)


def test_outage_closed_form_uses_average_speed():
    c = consts(sigma2=2)
    a = closed_form("outage_homog", [PeriodicOutage(3, 3, 1), PeriodicOutage(4, 2, 1)], c)
    assert a == closed_form("fixed_homog", [Constant(1), Constant(2)], c)


def test_baseline_examples():
    c = consts()  # L Delta / eps = 1
    assert baseline_time("minibatch", [1, 2], consts(sigma2=2)) == 4
    assert baseline_time("async", [1, 3], consts(sigma2=2)) == pytest.approx(3)
    assert baseline_time("rennala_fixed", [1, 1], consts(sigma2=4)) == 3
    with pytest.raises(ValueError):
        baseline_time("other", [1], c)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=8), st.floats(0, 500))
def test_fixed_speed_sandwich(v, r):
    d = next_time([Constant(x) for x in v], 0.0, SumCount(max(math.ceil(r - 1e-9), 1)))
    assert delta_homog(v, r, 0.25) <= d <= delta_homog(v, r, 4.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=8), st.floats(0, 500))
def test_heter_fixed_speed_sandwich(v, r):
    n = len(v)
    d = next_time([Constant(x) for x in v], 0.0, HarmonicCount(max(2 * r / n, 1.0)))
    assert delta_heter(v, r / n, 0.25) <= d <= delta_heter(v, r / n, 4.0)


def test_constants_validation():
    with pytest.raises(ValueError):
        ProblemConstants(L=0)
    with pytest.raises(ValueError):
        ProblemConstants(sigma2=-1)
