"""End-to-end acceptance checks, runnable from the test suite or ``hetsgd verify``.

Every check builds its own seeded instances, so results are reproducible.
"""
from __future__ import annotations

import math
from fractions import Fraction
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bounds import (HarmonicCount, ProblemConstants, SumCount, bound_sequence,
                     bound_sequence_from_rule, delta_heter, delta_homog, next_time)
from .lowerbound import tail_bound_check, window_params, window_violations
from .objectives import (Gaussian, HeterQuadratic, ProblemSpec, Quadratic, phi, prog, psi,
                         scaled_worst_case, worst_case_grad, zero_out_oracle)
from .optimizers import AlgorithmDriver, method_params, run_method
from .power import (Constant, PeriodicOutage, PiecewiseConstant, ScaledTrend, SineOffset,
                    snap)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str


def _rng(seed, salt):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, salt])))


# -- 1: bisection against a grid oracle ------------------------------------------

_POW = (0.25, 0.5, 1.0, 2.0, 4.0)


def _grid_instance(rng):
    """Small instance whose exact answer lies on the 1e-4 grid."""
    n = int(rng.integers(1, 5))
    profiles = []
    for _ in range(n):
        kind = rng.integers(3)
        if kind == 0:
            profiles.append(Constant(float(rng.choice(_POW))))
        elif kind == 1:
            period = float(rng.choice([2.0, 3.0, 4.0]))
            profiles.append(PeriodicOutage(float(rng.choice(_POW[1:])), period,
                                           float(rng.choice([0.5, 1.0, 1.5]))))
        else:
            m = int(rng.integers(1, 6))
            steps = rng.choice([0.16, 0.32, 0.48, 0.8, 1.6], size=m)
            b = np.concatenate([[0.0], np.cumsum(steps)])
            vals = list(rng.choice(_POW, size=m + 1))
            if m > 1 and rng.random() < 0.3:
                vals[int(rng.integers(0, m))] = 0.0  # an outage, never the last piece
            profiles.append(PiecewiseConstant(tuple(np.round(b, 4)), tuple(vals)))
    prev = round(0.0016 * int(rng.integers(0, 1500)), 4)
    if rng.random() < 0.5:
        rule = SumCount(int(rng.integers(1, 9)))
    else:
        rule = HarmonicCount(float(rng.choice([1.0, 1.5, 2.0, 3.0])))
    return profiles, prev, rule


def grid_oracle(profiles, prev, rule, h=1e-4):
    """First grid time prev + j*h at which the rule holds (midpoint Riemann sums of power)."""
    cells = 1 << 14
    while True:
        mids = prev + (np.arange(cells) + 0.5) * h
        W = np.array([np.cumsum(np.asarray(p.power_at(mids), dtype=float)) * h for p in profiles])
        r = np.round(W)
        W = np.where(np.abs(W - r) <= 1e-9 * np.maximum(1.0, np.abs(W)), r, W)
        C = np.floor(W)
        if isinstance(rule, SumCount):
            ok = C.sum(axis=0) >= rule.B
        else:
            with np.errstate(divide="ignore"):
                hm = np.where(np.all(C > 0, axis=0), len(profiles) / np.sum(1.0 / C, axis=0), 0.0)
            ok = hm >= rule.H
        idx = np.flatnonzero(ok)
        if idx.size:
            return prev + (idx[0] + 1) * h
        cells *= 2
        if cells > 1 << 26:
            return math.inf


def check_bisection(seed=0, instances=200):
    rng = _rng(seed, 1)
    worst, spent = 0.0, 0.0
    for _ in range(instances):
        profiles, prev, rule = _grid_instance(rng)
        t0 = time.perf_counter()
        t = next_time(profiles, prev, rule)
        spent += time.perf_counter() - t0
        worst = max(worst, abs(t - grid_oracle(profiles, prev, rule)))
    ok = worst <= 1e-6 and spent < 10
    return ok, f"max |bisection - grid| = {worst:.2e}, bisection time {spent:.2f}s"


# -- 2 and 4: closed-form sandwiches -------------------------------------------------


def _speeds(rng):
    n = int(rng.integers(1, 9))
    return np.exp(rng.uniform(np.log(0.1), np.log(10), size=n))


def _ratio(rng):
    return 0.0 if rng.random() < 0.1 else float(np.exp(rng.uniform(np.log(0.05), np.log(1e3))))


def check_homog_sandwich(seed=0, instances=100):
    rng = _rng(seed, 2)
    bad = 0
    for _ in range(instances):
        v, r = _speeds(rng), _ratio(rng)
        d = next_time([Constant(float(x)) for x in v], 0.0, SumCount(max(math.ceil(snap(r)), 1)))
        lo, hi = delta_homog(v, r, 0.25), delta_homog(v, r, 4.0)
        bad += not (lo <= d <= hi)
    return bad == 0, f"{bad} violations in {instances} instances"


def check_heter_sandwich(seed=0, instances=100):
    rng = _rng(seed, 4)
    bad = 0
    for _ in range(instances):
        v, r = _speeds(rng), _ratio(rng)
        n = len(v)
        d = next_time([Constant(float(x)) for x in v], 0.0, HarmonicCount(max(2 * r / n, 1.0)))
        lo, hi = delta_heter(v, r / n, 0.25), delta_heter(v, r / n, 4.0)
        bad += not (lo <= d <= hi)
    return bad == 0, f"{bad} violations in {instances} instances"


# -- 3: shared trend reduces to the fixed model ---------------------------------------


def check_trend_reduction(seed=0, instances=5, K=50):
    rng = _rng(seed, 3)
    trend = SineOffset(1.01, 1.0)
    worst = 0.0
    for _ in range(instances):
        v = np.exp(rng.uniform(np.log(0.2), np.log(5), size=int(rng.integers(1, 5))))
        r = float(rng.choice([0.0, 3.0, 10.0, 40.0]))
        consts = ProblemConstants(L=1, Delta=1, sigma2=r, eps=1)
        times = bound_sequence([ScaledTrend(float(x), trend) for x in v], consts,
                               "rennala_upper", K=K)
        d = bound_sequence([Constant(float(x)) for x in v], consts, "rennala_upper", K=1)[1]
        for k in range(1, K + 1):
            worst = max(worst, abs(times[k] - trend.inverse(k * d)))
    return worst <= 1e-6, f"max |t_k - G^-1(k delta)| = {worst:.2e}"


# -- 5: simulated Rennala time equals the upper sequence ----------------------------


def _random_profiles(rng, n):
    out = []
    for _ in range(n):
        kind = rng.integers(4)
        v = float(np.exp(rng.uniform(np.log(0.3), np.log(3))))
        if kind == 0:
            out.append(Constant(v))
        elif kind == 1:
            out.append(PeriodicOutage(v, float(rng.uniform(1.5, 4)), float(rng.uniform(0.3, 1.2))))
        elif kind == 2:
            b = np.concatenate([[0.0], np.cumsum(rng.uniform(0.2, 2.0, size=3))])
            out.append(PiecewiseConstant(tuple(b), tuple(rng.uniform(0.1, 3, size=4))))
        else:
            out.append(ScaledTrend(v, SineOffset(1.01, 1.0)))
    return out


def check_tightness(seed=0, configs=20):
    rng = _rng(seed, 5)
    worst = 0.0
    for c in range(configs):
        n = int(rng.integers(1, 5))
        profiles = _random_profiles(rng, n)
        K, S = int(rng.integers(2, 12)), int(rng.integers(1, 8))
        consts = ProblemConstants(L=1, Delta=1, eps=24 / K, sigma2=S * 24 / K)
        gamma, S_, K_ = method_params("rennala", "nonconvex", consts)
        prob = ProblemSpec(Quadratic(1.0, 3), consts, Gaussian(consts.sigma2), np.ones(3))
        res = run_method(AlgorithmDriver("rennala", gamma, S_, K_), prob, profiles, seed=c)
        bound = bound_sequence(profiles, consts, "rennala_upper")[-1]
        worst = max(worst, abs(res.total_time - bound) / bound)
    return worst <= 1e-6, f"max relative gap {worst:.2e} over {configs} configs"


# -- 6, 7, 8: convergence ----------------------------------------------------------

_CONV_PROFILES = (Constant(1.0), Constant(2.0), PeriodicOutage(3.0, 2.0, 1.0),
                  ScaledTrend(0.7, SineOffset(1.01, 1.0)))


def _x0(center, Delta, L):
    x0 = np.array(center, dtype=float)
    x0[0] += math.sqrt(2 * Delta / L)
    return x0


def check_rennala_convergence(seed=0, seeds=20):
    t0 = time.perf_counter()
    consts = ProblemConstants(L=1, Delta=1, sigma2=100, eps=0.01)
    gamma, S, K = method_params("rennala", "nonconvex", consts)
    S = min(S, 10 ** 4)
    prob = ProblemSpec(Quadratic(1.0, 10), consts, Gaussian(100), _x0(np.zeros(10), 1, 1))
    vals = []
    for s in range(seeds):
        res = run_method(AlgorithmDriver("rennala", gamma, S, K), prob, _CONV_PROFILES,
                         seed=seed * 1000 + s, mode="iteration")
        vals.append(np.mean([row[2] for row in res.trajectory[:K]]))
    avg, spent = float(np.mean(vals)), time.perf_counter() - t0
    return avg <= consts.eps and spent < 120, f"mean ||grad||^2 = {avg:.5f} (K={K}, S={S}), {spent:.1f}s"


def malenia_exit_ok(B, last, S) -> bool:
    """Harmonic condition holds with B and fails without the final arrival (exact arithmetic)."""
    n = len(B)

    def holds(c):
        # n / sum(1/c_i) >= S / n  <=>  n^2 >= S * sum(1/c_i)
        return min(c) > 0 and n * n >= S * sum(Fraction(1, int(x)) for x in c)

    before = list(B)
    before[last] -= 1
    return holds(B) and not holds(before)


def check_malenia_convergence(seed=0, seeds=20):
    consts = ProblemConstants(L=1, Delta=1, sigma2=100, eps=0.01)
    n = len(_CONV_PROFILES)
    gamma, S, K = method_params("malenia", "nonconvex", consts, n)
    S = min(S, 10 ** 4)
    centers = np.array([[1.0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0], [0, 0, -1.0, 0, 0], [-1.0, -1.0, 1.0, 0, 0]])
    centers = np.pad(centers, ((0, 0), (0, 5)))
    obj = HeterQuadratic(1.0, centers)
    prob = ProblemSpec(obj, consts, Gaussian(100), _x0(centers.mean(axis=0), 1, 1))
    vals, bad = [], 0
    for s in range(seeds):
        res = run_method(AlgorithmDriver("malenia", gamma, S, K), prob, _CONV_PROFILES,
                         seed=seed * 1000 + s, mode="iteration")
        vals.append(np.mean([row[2] for row in res.trajectory[:K]]))
        bad += sum(not malenia_exit_ok(B, last, S) for B, last in res.batches)
    avg = float(np.mean(vals))
    return avg <= consts.eps and bad == 0, f"mean ||grad||^2 = {avg:.5f}, exit violations {bad}"


def check_accelerated(seed=0, seeds=20, sigma2=1.0):
    consts = ProblemConstants(L=1, Delta=0.5, sigma2=sigma2, eps=0.01, R=1)
    gamma, S, K = method_params("accel_rennala", "convex_smooth", consts)
    prob = ProblemSpec(Quadratic(1.0, 10), consts, Gaussian(sigma2), _x0(np.zeros(10), 0.5, 1))
    gaps = []
    for s in range(seeds):
        res = run_method(AlgorithmDriver("accel_rennala", gamma, S, K), prob, _CONV_PROFILES,
                         seed=seed * 1000 + s, mode="iteration")
        gaps.append(res.trajectory[-1][3])
    gap = float(np.mean(gaps))
    return gap <= consts.eps, f"E f(x^K) - f* = {gap:.2e} (K={K}, S={S}, gamma={gamma:.4f})"


# -- 9: properties of the chain function ---------------------------------------------


def _chain_values(X):
    """F_T evaluated row-wise on a batch of points."""
    prev, cur = X[:, :-1], X[:, 1:]
    links = psi(-prev) * phi(-cur) - psi(prev) * phi(cur)
    return -phi(X[:, 0]) + links.sum(axis=1)


def check_chain_function(seed=0, points=10_000, T=20):
    rng = _rng(seed, 9)
    X = rng.uniform(-2, 2, size=(points, T))
    cut = rng.integers(0, T + 1, size=points)
    half = points // 2
    X[:half] *= np.arange(T)[None, :] < cut[:half, None]  # random progress levels
    bad_inf = bad_prog = bad_norm = 0
    for x in X:
        _, g = worst_case_grad(x, T)
        bad_inf += np.max(np.abs(g)) > 23
        bad_prog += prog(g) > prog(x) + 1
        bad_norm += prog(x) < T and np.linalg.norm(g) <= 1
    # central differences on every sampled point, all coordinates at once
    h = 1e-6
    G = np.array([worst_case_grad(x, T)[1] for x in X])
    FD = np.empty_like(X)
    for j in range(T):
        E = np.zeros(T)
        E[j] = h
        FD[:, j] = (_chain_values(X + E) - _chain_values(X - E)) / (2 * h)
    err = np.linalg.norm(FD - G, axis=1)
    fd_bad = int(np.sum(err > 1e-5 * np.maximum(1.0, np.linalg.norm(G, axis=1))))
    total = bad_inf + bad_prog + bad_norm + fd_bad
    return total == 0, (f"sup-norm {bad_inf}, chain {bad_prog}, norm {bad_norm}, "
                        f"finite-difference {fd_bad} violations")


# -- 10: zero-out oracle moments -----------------------------------------------------


def check_zero_out(seed=0, triples=20, draws=100_000, T=8):
    rng = _rng(seed, 10)
    mean_bad = var_bad = tot_bad = 0
    for _ in range(triples):
        k = int(rng.integers(0, T))
        x = np.zeros(T)
        x[:k] = rng.uniform(0.6, 2.0, size=k) * rng.choice([-1, 1], size=k)
        _, g = worst_case_grad(x, T)
        p = float(rng.uniform(0.05, 0.95))
        G = np.array([zero_out_oracle(g, k, p, rng) for _ in range(draws)])
        D = G - g  # exactly zero on coordinates the oracle passes through
        se = D.std(axis=0, ddof=1) / math.sqrt(draws)
        mean_bad += int(np.sum(np.abs(D.mean(axis=0)) > 4 * se))
        target = g[k] ** 2 * (1 - p) / p
        if target > 0:
            var_bad += abs(G[:, k].var(ddof=1) / target - 1) > 0.05
        sigma2 = np.max(np.abs(g)) ** 2 * (1 - p) / p
        sq = np.sum((G - g) ** 2, axis=1)
        tot_bad += sq.mean() > sigma2 + 3 * sq.std(ddof=1) / math.sqrt(draws)
    total = mean_bad + var_bad + tot_bad
    return total == 0, f"mean {mean_bad}, variance {var_bad}, total-variance {tot_bad} violations"


# -- 11: concentration bounds ------------------------------------------------------


def check_tail_bounds(seed=0, trials=10_000):
    t0 = time.perf_counter()
    rng = _rng(seed, 11)
    worst, fails = -1.0, 0
    for p in (0.05, 0.1, 0.5):
        for delta in (0.05, 0.1):
            r = tail_bound_check("chernoff_sum", {"T": 100, "p": p, "delta": delta}, trials, rng)
            fails += not r.passed
            worst = max(worst, r.empirical - r.bound)
    r = tail_bound_check("chernoff_sum", {"T": 100, "delta": 0.1,
                                          "p": lambda h: 0.05 if len(h) % 2 else 0.5}, 2000, rng)
    fails += not r.passed
    for ps in ((0.05, 0.1, 0.5), (0.3, 0.7)):
        r = tail_bound_check("many_geom", {"K": 20, "p": ps}, trials, rng)
        fails += not r.passed
        worst = max(worst, r.empirical - r.bound)
    spent = time.perf_counter() - t0
    return fails == 0 and spent < 30, f"{fails} exceedances, max(emp - bound) {worst:.4f}, {spent:.1f}s"


# -- 12: lower bound against a real run ------------------------------------------------


def lower_bound_setup():
    consts = ProblemConstants(L=1, Delta=20 * 2 * 152 * 12, sigma2=5290, eps=1)
    profiles = [Constant(1.0), PeriodicOutage(2.0, 3.0, 1.0),
                ScaledTrend(0.5, SineOffset(1.01, 1.0)),
                PiecewiseConstant((0.0, 5.0, 10.0), (0.5, 2.0, 1.0))]
    return consts, profiles


def check_lower_end_to_end(seed=0, seeds=200, S=5):
    consts, profiles = lower_bound_setup()
    prob = scaled_worst_case(consts, "homog")
    T = prob.meta["T"]
    lower = bound_sequence(profiles, consts, "homog_lower")[-1]
    # any zero-respecting method is admissible; a large step pushes each revealed
    # coordinate past the activation threshold of the next link at once
    drv = AlgorithmDriver("rennala", 152.0 / consts.L, S, 100_000, stop_when=lambda x: prog(x) >= T)
    hits = reached = 0
    for s in range(seeds):
        res = run_method(drv, prob, profiles, seed=seed * 1000 + s)
        reached += res.stopped_by == "condition"
        hits += res.total_time >= lower
    freq = hits / seeds
    target = 0.5 - 3 * math.sqrt(0.25 / seeds)
    return freq >= target and reached == seeds, (
        f"T={T}, p={prob.oracle.p:.3f}: time >= lower final ({lower:.3f}) in {freq:.3f} "
        f"of runs (target {target:.3f}); reached prog=T in {reached}/{seeds}")


# -- 13: window construction -------------------------------------------------------


def check_windows(seed=0, configs=50):
    rng = _rng(seed, 13)
    bad = 0
    for _ in range(configs):
        n = int(rng.integers(1, 5))
        profiles = _random_profiles(rng, n)
        sigma2 = 0.0 if rng.random() < 0.2 else float(np.exp(rng.uniform(0, np.log(1e4))))
        consts = ProblemConstants(L=1, Delta=1, sigma2=sigma2, eps=float(rng.uniform(0.01, 1)))
        K = float(rng.choice([1, 2, 16, 64]))
        try:
            params = window_params(profiles, K, consts, int(rng.integers(1, 8)))
        except AssertionError:  # the builder refuses to return a violating window set
            bad += 1
            continue
        bad += len(window_violations(params, profiles))
    return bad == 0, f"{bad} violations in {configs} configs"


# -- 14: determinism of the command line -------------------------------------------


def determinism_configs():
    workers = [{"kind": "constant", "v": 1.0}, {"kind": "periodic_outage", "v": 2.0, "period": 3.0},
               {"kind": "scaled_trend", "v": 0.5}]
    return {
        "simulate": {"experiment": "simulate", "workers": workers,
                     "constants": {"L": 1, "Delta": 1, "sigma2": 1, "eps": 0.5},
                     "problem": {"objective": "quadratic", "dim": 4, "oracle": "gaussian"},
                     "method": {"name": "rennala", "K": 20}, "num_seeds": 2},
        "adversary": {"experiment": "adversary", "workers": workers,
                      "constants": {"L": 1, "Delta": 1, "sigma2": 50, "eps": 0.1},
                      "adversary": {"kind": "homog", "T": 6, "trials": 20}},
        "adversary_markov": {"experiment": "adversary", "workers": workers,
                             "constants": {"L": 1, "Delta": 1, "sigma2": 50, "eps": 0.1},
                             "adversary": {"kind": "markov", "T": 6, "trials": 50}},
    }


def check_determinism(seed=0):
    import contextlib
    import io
    import json

    from .cli import execute
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for name, cfg in determinism_configs().items():
            path = tmp / f"{name}.json"
            path.write_text(json.dumps(cfg))
            outs = []
            for rep in range(2):
                out = tmp / f"{name}_{rep}"
                with contextlib.redirect_stdout(io.StringIO()):
                    execute(cfg["experiment"], str(path), seed, str(out))
                outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
            if outs[0] != outs[1] or not outs[0]:
                mismatched.append(name)
    return not mismatched, "identical CSVs" if not mismatched else f"differences in {mismatched}"


CRITERIA = {
    1: ("bisection vs grid oracle", check_bisection),
    2: ("fixed-speed sandwich (sum rule)", check_homog_sandwich),
    3: ("shared-trend reduction", check_trend_reduction),
    4: ("fixed-speed sandwich (harmonic rule)", check_heter_sandwich),
    5: ("simulator/bound tightness", check_tightness),
    6: ("Rennala convergence", check_rennala_convergence),
    7: ("Malenia convergence + exit invariant", check_malenia_convergence),
    8: ("accelerated Rennala convergence", check_accelerated),
    9: ("chain function properties", check_chain_function),
    10: ("zero-out oracle moments", check_zero_out),
    11: ("concentration bounds", check_tail_bounds),
    12: ("lower bound end-to-end", check_lower_end_to_end),
    13: ("window postcondition", check_windows),
    14: ("CLI determinism", check_determinism),
}


def run_criterion(number: int, seed: int = 0) -> CriterionResult:
    name, fn = CRITERIA[number]
    passed, detail = fn(seed=seed)
    return CriterionResult(number, name, bool(passed), detail)


def run_criteria(numbers, seed: int = 0):
    return [run_criterion(k, seed) for k in numbers]
