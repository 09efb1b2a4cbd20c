"""Monte Carlo tools for the lower-bound constructions.

Progress on the zero-chain function is gated by geometric waiting times:
each new coordinate needs a run of Bernoulli(p) failures to end.  This
module simulates those waiting times directly, estimates the tail
probabilities they are controlled by, and builds the time windows used for
heterogeneous workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .bounds import GAMMA_INF, ProblemConstants, SumCount, bound_sequence_from_rule, next_time
from .power import INFINITY, PowerProfile, inverse_work, snapped_floor


def _check_p(p):
    if not 0 < p <= 1:
        raise ValueError("probability must lie in (0, 1]")


def sample_geometric(p: float, rng: np.random.Generator, size=None):
    """Geometric variable on {1, 2, ...} with success probability p (inverse CDF)."""
    _check_p(p)
    if p == 1:
        return 1 if size is None else np.ones(size, dtype=np.int64)
    u = 1.0 - rng.random(size)  # in (0, 1]
    k = np.ceil(np.log(u) / math.log1p(-p))
    k = np.maximum(k, 1).astype(np.int64)
    return int(k) if size is None else k


@dataclass
class AdversaryTrace:
    times: list
    etas: list
    seed: Optional[int] = None


def homog_adversary_run(profiles: Sequence[PowerProfile], p: float, T: int,
                        rng: np.random.Generator, seed=None) -> AdversaryTrace:
    """Earliest times at which coordinates 1..T can be discovered by the workers together."""
    if T < 1:
        raise ValueError("T must be at least 1")
    _check_p(p)
    t, times, etas = 0.0, [], []
    for _ in range(T):
        eta = sample_geometric(p, rng)
        t = next_time(profiles, t, SumCount(eta))
        times.append(t)
        etas.append(eta)
    return AdversaryTrace(times, etas, seed)


def quarter_rule_holds(trace: AdversaryTrace, profiles, p: float) -> bool:
    """Does t_T dominate the deterministic sequence with threshold 1/(4p) at index floor((T-1)/2)?"""
    T = len(trace.times)
    m = (T - 1) // 2
    lower = bound_sequence_from_rule(profiles, SumCount(1.0 / (4 * p)), m)
    return trace.times[-1] >= lower[-1] * (1 - 1e-12)


# -- concentration checks ------------------------------------------------------


@dataclass
class TailCheck:
    empirical: float
    bound: float
    trials: int

    @property
    def se(self):
        q = min(max(self.bound, 0.0), 1.0)
        return math.sqrt(q * (1 - q) / self.trials)

    @property
    def passed(self):
        return self.empirical <= self.bound + 3 * self.se


def tail_bound_check(kind: str, params: dict, trials: int, rng: np.random.Generator) -> TailCheck:
    """Estimate the probability bounded by one of the two concentration bounds.

    chernoff_sum, params {T, p, delta}: P(sum_i 1[eta_i > 1/(4 p_i)] <= T/2 + ln delta)
    against delta.  ``p`` may be a number, a length-T sequence, or a callable
    (history of etas) -> p for history-dependent probabilities.

    many_geom, params {K, p}: P(some k has sum_{j<=K} eta_{k,j} <= K/(8 p_k)) for
    T_bar = len(p) groups, against T_bar * exp(-K/2).
    """
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    if kind == "chernoff_sum":
        T, delta, p = int(params["T"]), float(params["delta"]), params["p"]
        if callable(p):
            hits = np.zeros(trials)
            for r in range(trials):
                hist = []
                for _ in range(T):
                    pi = float(p(hist))
                    eta = sample_geometric(pi, rng)
                    hist.append(eta)
                    hits[r] += eta > 1 / (4 * pi)
        else:
            pv = np.broadcast_to(np.asarray(p, dtype=float), (T,))
            for q in pv:
                _check_p(q)
            u = 1.0 - rng.random((trials, T))
            with np.errstate(divide="ignore"):
                eta = np.where(pv == 1, 1.0, np.maximum(np.ceil(np.log(u) / np.log1p(-pv)), 1))
            hits = (eta > 1 / (4 * pv)).sum(axis=1)
        emp = float(np.mean(hits <= T / 2 + math.log(delta)))
        return TailCheck(emp, delta, trials)
    if kind == "many_geom":
        K = int(params["K"])
        pv = np.asarray(params["p"], dtype=float)
        for q in pv:
            _check_p(q)
        bad = np.zeros(trials, dtype=bool)
        for q in pv:
            s = sample_geometric(q, rng, size=(trials, K)).sum(axis=1)
            bad |= s <= K / (8 * q)
        return TailCheck(float(bad.mean()), len(pv) * math.exp(-K / 2), trials)
    raise ValueError(f"unknown tail check {kind!r}")


# -- windows for heterogeneous workers -----------------------------------------


@dataclass
class WindowParams:
    """Window ends t_bar[0..T_bar], integer segment lengths a[w, i] and probabilities p[w, i].

    Row w (1-based windows, row 0 unused) splits the S blocks of a chain
    coordinate among the workers; row T_bar + 1 covers the time after the
    last window.  Workers owning no blocks in a window get p = 0.
    """

    t_bar: list
    a: np.ndarray
    p: np.ndarray
    S: int
    K: float
    option: list = field(default_factory=list)

    @property
    def windows(self):
        return len(self.t_bar) - 1

    def owner(self, w: int, j: int) -> int:
        """Worker holding block j (1-based) in window w."""
        edges = np.cumsum(self.a[w])
        return int(np.searchsorted(edges, j, side="left"))

    def window_end(self, w: int) -> float:
        return self.t_bar[w] if w < len(self.t_bar) else INFINITY


def _harm_sum(profiles, prev, t, coef):
    tot = 0.0
    for pr in profiles:
        d = pr.cumulative(t) - pr.cumulative(prev)
        if d <= 0:
            return INFINITY
        tot += coef / d
    return tot


def _solve_t2(profiles, prev, coef, target=64.0):
    """Leftmost t > prev where sum_i coef / (V_i(t) - V_i(prev)) falls to target."""
    if coef == 0:
        return prev
    lo, width = prev, 1.0
    hi = prev + width
    while _harm_sum(profiles, prev, hi, coef) > target:
        lo = hi
        width *= 2
        hi = prev + width
        if hi > 1e12:
            return INFINITY
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-12 * max(1.0, hi):
            break
        if _harm_sum(profiles, prev, mid, coef) > target:
            lo = mid
        else:
            hi = mid
    return hi


def window_params(profiles: Sequence[PowerProfile], K: float, consts: ProblemConstants,
                  T_bar: int) -> WindowParams:
    """Build the windows and block allocations for heterogeneous lower bounds."""
    if K <= 0 or T_bar < 1:
        raise ValueError("need K > 0 and at least one window")
    n = len(profiles)
    c = consts
    coef = K * c.sigma2 / (n ** 2 * 4 * c.eps * GAMMA_INF ** 2)
    t_bar = [0.0]
    a_bar = np.zeros((T_bar + 2, n), dtype=np.int64)
    option = [0]
    for w in range(1, T_bar + 1):
        prev = t_bar[-1]
        ends = [inverse_work(pr, K / 16, prev) for pr in profiles]
        t1 = max(ends)
        t2 = _solve_t2(profiles, prev, coef)
        if math.isinf(t1) and math.isinf(t2):
            raise ValueError("a window never closes: some worker has bounded total work")
        if t1 > t2:
            a_bar[w, int(np.argmax(ends))] = 1
            t_bar.append(t1)
            option.append(1)
        else:
            d = np.array([pr.cumulative(t2) - pr.cumulative(prev) for pr in profiles])
            a_bar[w] = [int(snapped_floor(d.max() / di)) for di in d]
            t_bar.append(t2)
            option.append(2)
    a_bar[T_bar + 1, 0] = 1
    option.append(1)
    S = int(a_bar[1:].sum(axis=1).max())

    a = np.zeros_like(a_bar)
    for w in range(1, T_bar + 2):
        tot = int(a_bar[w].sum())
        if tot == S:
            a[w] = a_bar[w]
            continue
        k_w = max(2, -(-S // tot))
        if option[w] == 1:
            a[w] = k_w * a_bar[w]
            a[w][a[w] > 0] = S  # single owner takes everything
        else:
            a[w] = (k_w - 1) * a_bar[w]
            rest = S - int(a[w].sum())
            for i in range(n):
                r = min(int(a_bar[w, i]), rest)
                a[w, i] += r
                rest -= r
    with np.errstate(divide="ignore"):
        if c.sigma2 == 0:
            p = np.where(a > 0, 1.0, 0.0)
        else:
            p = np.minimum(4 * c.eps * GAMMA_INF ** 2 * a * n ** 2 / (c.sigma2 * S), 1.0)
    p[0] = 0.0
    params = WindowParams(t_bar, a, p, S, K, option)
    bad = window_violations(params, profiles)
    if bad:
        raise AssertionError(f"window postcondition fails at (w, i) = {bad[:5]}")
    return params


def window_violations(params: WindowParams, profiles) -> list:
    """Pairs (w, i) where V_i^{-1}(K / (8 p) + V_i(t_{w-1})) < t_w."""
    out = []
    for w in range(1, params.windows + 1):
        for i, pr in enumerate(profiles):
            pw = params.p[w, i]
            need = INFINITY if pw == 0 else params.K / (8 * pw)
            if inverse_work(pr, need, params.t_bar[w - 1]) < params.t_bar[w] * (1 - 1e-12):
                out.append((w, i))
    return out


def markov_window_run(params: WindowParams, profiles, block: int, T: int,
                      rng: np.random.Generator):
    """Progress of one block through T chain coordinates.

    Returns the final window index w and the time t_bar[w - 1] that any
    algorithm must have spent to get there.
    """
    if not 1 <= block <= params.S:
        raise ValueError("block index out of range")
    w = 1
    last = params.windows + 1
    for _ in range(T):
        i = params.owner(w, block)
        eta = sample_geometric(float(params.p[w, i]), rng)
        if w <= params.windows and inverse_work(profiles[i], eta, params.t_bar[w - 1]) >= params.t_bar[w]:
            w += 1
        w = min(w, last)
    return w, params.t_bar[w - 1]
