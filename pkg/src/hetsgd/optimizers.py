"""Server-side algorithms: Rennala, Malenia, Minibatch and Asynchronous SGD.

Each batched method is written once against a small backend interface.
``EventBackend`` runs it gradient by gradient inside the protocol
simulation; ``IterationBackend`` jumps from one iteration end to the next
using the threshold-rule timing and draws the summed noise of a batch in
one shot.  The iteration backend gives the same iteration times on
deterministic profiles and the same distribution of iterates, at a cost
that does not grow with the batch size.
"""
from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .bounds import (HarmonicCount, ProblemConstants, SumCount, harmonic_reaches,
                     iterations_needed, next_time, rule_counts)
from .engine import Recorder, RunResult, Simulation, worker_streams
from .objectives import ProblemSpec, noisy_grad_sum
from .power import INFINITY, PowerProfile, completion_time, inverse_work, snapped_ceil

METHODS = ("rennala", "malenia", "minibatch", "async", "accel_rennala", "accel_malenia")
REGIMES = ("nonconvex", "convex_nonsmooth", "convex_smooth")


# -- parameters -------------------------------------------------------------


def method_params(method: str, regime: str, consts: ProblemConstants, n: int = 1):
    """Stepsize, batch size and iteration budget (gamma, S, K) prescribed for a method."""
    c = consts
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    heter = method in ("malenia", "accel_malenia")
    floor_S = n if heter else 1

    if regime == "nonconvex":
        if method.startswith("accel_"):
            raise ValueError("accelerated methods are for the convex smooth regime")
        K = iterations_needed("nonconvex", c)
        if method == "rennala":
            return 1.0 / (2 * c.L), max(snapped_ceil(c.sigma2 / c.eps), 1), K
        if method == "malenia":
            S = max(snapped_ceil(c.sigma2 / c.eps), n)
            gamma = 1.0 / c.L if c.sigma2 == 0 else min(1.0 / c.L, c.eps * S / (2 * c.L * c.sigma2))
            return gamma, S, K
        if method == "minibatch":
            gamma = 1.0 / c.L if c.sigma2 == 0 else min(1.0 / c.L, n * c.eps / (2 * c.L * c.sigma2))
            return gamma, n, snapped_ceil(4 * c.Delta / (gamma * c.eps))
        # async baseline: one step per arrival
        gamma = 1.0 / c.L if c.sigma2 == 0 else min(1.0 / c.L, c.eps / (c.L * c.sigma2))
        gamma /= n
        return gamma, 1, snapped_ceil(4 * c.Delta / (gamma * c.eps))

    if regime == "convex_nonsmooth":
        if method not in ("rennala", "malenia"):
            raise ValueError(f"{method} has no convex nonsmooth parameters")
        S = max(snapped_ceil(c.sigma2 / c.M ** 2), floor_S)
        gamma = c.eps / (c.M ** 2 + c.sigma2 / S)
        return gamma, S, iterations_needed("convex_nonsmooth", c)

    if method not in ("accel_rennala", "accel_malenia"):
        raise ValueError(f"{method} has no convex smooth parameters")
    S = max(snapped_ceil(c.sigma2 * c.R / (c.eps ** 1.5 * math.sqrt(c.L))), floor_S)
    K = iterations_needed("convex_smooth", c)  # K first, gamma depends on it
    gamma = 1.0 / (4 * c.L)
    if c.sigma2 > 0:
        gamma = min(gamma, math.sqrt(3 * c.R ** 2 * S / (4 * c.sigma2 * (K + 1) * (K + 2) ** 2)))
    return gamma, S, K


@dataclass
class AlgorithmDriver:
    """A method together with its stepsize gamma, batch target S and budget K."""

    method: str
    gamma: float
    S: int
    K: int
    stop_when: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.gamma > 0 and self.S >= 1 and self.K >= 1):
            raise ValueError("need gamma > 0, S >= 1 and K >= 1")

    @classmethod
    def from_params(cls, method, regime, consts, n, **overrides):
        gamma, S, K = method_params(method, regime, consts, n)
        d = cls(method, gamma, S, K)
        return replace(d, **{k: v for k, v in overrides.items() if v is not None})

    @property
    def accelerated(self):
        return self.method.startswith("accel_")

    def __call__(self, backend):
        if self.method == "async":
            _run_async(self, backend)
        else:
            _run_batched(self, backend)


# -- accelerated recursion ------------------------------------------------------


@dataclass
class AccelState:
    x: np.ndarray
    u: np.ndarray
    y: Optional[np.ndarray] = None


def accelerated_query(state: AccelState, k: int):
    """Point y^{k+1} at which the k-th batch of gradients is computed."""
    a = 2.0 / (k + 2)
    return (1 - a) * state.x + a * state.u


def accelerated_update(state: AccelState, g, k: int, gamma: float, s_k: float) -> AccelState:
    """One step of the accelerated recursion with stepsize gamma*(k+1) and weight 2/(k+2).

    ``g`` is the gradient estimate at y^{k+1} summed over a batch of
    ``s_k`` samples (pass s_k=1 for an already averaged estimate).
    """
    a = 2.0 / (k + 2)
    y = (1 - a) * state.x + a * state.u
    u = state.u - (gamma * (k + 1) / s_k) * np.asarray(g, dtype=float)
    x = (1 - a) * state.x + a * u
    return AccelState(x, u, y)


# -- backends ---------------------------------------------------------------


class EventBackend:
    """Batch collection by literally running the protocol, one gradient at a time."""

    def __init__(self, sim: Simulation):
        self.sim = sim
        self.n = sim.n

    def __getattr__(self, name):
        return getattr(self.sim, name)

    def _ask_all(self, x):
        for i in range(self.n):
            self.sim.ask(i, x)

    def collect_sum(self, x, S):
        """Sum of the first S gradients to arrive; finishers are re-asked at once."""
        sim = self.sim
        self._ask_all(x)
        g = np.zeros(sim.problem.dim)
        B = [0] * self.n
        last = None
        for _ in range(S):
            ev = sim.next_gradient()
            if ev is None:
                return None
            i, gi = ev
            g += gi
            B[i] += 1
            last = i
            sim.ask(i, x)
        sim.stop_all()
        return g, S, B, last

    def collect_harmonic(self, x, S):
        """Collect until the harmonic mean of the per-worker counts reaches S/n."""
        sim = self.sim
        self._ask_all(x)
        acc = np.zeros((self.n, sim.problem.dim))
        B = [0] * self.n
        last = None
        while not harmonic_reaches(B, Fraction(S, self.n)):
            ev = sim.next_gradient()
            if ev is None:
                return None
            i, gi = ev
            acc[i] += gi
            B[i] += 1
            last = i
            sim.ask(i, x)
        sim.stop_all()
        g = np.mean(acc / np.asarray(B, dtype=float)[:, None], axis=0)
        return g, 1, B, last

    def collect_one_each(self, x):
        sim = self.sim
        self._ask_all(x)
        g = np.zeros(sim.problem.dim)
        got = [0] * self.n
        last = None
        while sum(got) < self.n:
            ev = sim.next_gradient()
            if ev is None:
                return None
            i, gi = ev
            g += gi
            got[i] += 1
            last = i
        return g, self.n, got, last


class IterationBackend(Recorder):
    """Iteration-level execution: exact iteration times, batch noise drawn in aggregate."""

    def __init__(self, problem: ProblemSpec, profiles: Sequence[PowerProfile], seed: int = 0,
                 horizon: float = INFINITY, **record_kwargs):
        self.profiles = list(profiles)
        self.n = len(self.profiles)
        super().__init__(problem, self.n, seed, **record_kwargs)
        self.horizon = horizon
        self.rng = worker_streams(seed, self.n)[self.n]

    def _end(self, rule):
        t, B, last = iteration_counts(self.profiles, self.clock, rule)
        if t > self.horizon:
            self.truncated = True
            self.clock = max(self.clock, self.horizon)
            return None
        self.clock = t
        for i, b in enumerate(B):
            self.result.grad_counts[i] += b
        return B, last

    def _sums(self, x, B):
        return [noisy_grad_sum(self.problem, x, b, self.rng, i) for i, b in enumerate(B)]

    def collect_sum(self, x, S):
        out = self._end(SumCount(S))
        if out is None:
            return None
        B, last = out
        g = np.zeros(self.problem.dim)
        for gi in self._sums(x, B):
            g += gi
        return g, S, B, last

    def collect_harmonic(self, x, S):
        out = self._end(HarmonicCount(S / self.n))
        if out is None:
            return None
        B, last = out
        sums = self._sums(x, B)
        g = np.mean([gi / b for gi, b in zip(sums, B)], axis=0)
        return g, 1, B, last

    def collect_one_each(self, x):
        done = [completion_time(p, self.clock) for p in self.profiles]
        t = max(done)
        if t > self.horizon:
            self.truncated = True
            self.clock = max(self.clock, self.horizon)
            return None
        self.clock = t
        B = [1] * self.n
        for i in range(self.n):
            self.result.grad_counts[i] += 1
        g = np.zeros(self.problem.dim)
        for gi in self._sums(x, B):
            g += gi
        last = max(range(self.n), key=lambda i: (done[i], i))
        return g, self.n, B, last


def iteration_counts(profiles, start: float, rule, tol: float = 1e-9):
    t, B, last = _iteration_counts(tuple(profiles), float(start), rule, tol)
    return t, list(B), last


@lru_cache(maxsize=1 << 16)
def _iteration_counts(profiles, start, rule, tol):
    """End time of an iteration and the gradients each worker contributed.

    Results are memoised, since repeated seeds replay the same schedule.

    Workers are re-asked as soon as they finish, so by time t worker i has
    floor(V_i(t) - V_i(start)) gradients.  Arrivals that coincide with the
    end time are taken in ascending worker order until the rule holds, the
    same tie-break as the event queue.  Returns (t, B, last_worker).
    """
    t = next_time(profiles, start, rule)
    if math.isinf(t):
        return INFINITY, (0,) * len(profiles), None
    counts = [int(c) for c in rule_counts(profiles, start, t, rule)]
    at_t = [i for i, (p, c) in enumerate(zip(profiles, counts))
            if c >= 1 and abs(inverse_work(p, c, start) - t) <= tol * max(1.0, t)]
    B = list(counts)
    for i in at_t:
        B[i] -= 1
    last = None
    for i in at_t:
        B[i] += 1
        last = i
        if rule.satisfied(B):
            break
    return t, tuple(B), last


# -- drivers ----------------------------------------------------------------


def _run_batched(driver: AlgorithmDriver, be):
    x = be.problem.start()
    be.record(x)
    state = AccelState(x.copy(), x.copy()) if driver.accelerated else None
    for k in range(driver.K):
        q = accelerated_query(state, k) if state is not None else x
        if driver.method in ("rennala", "accel_rennala"):
            out = be.collect_sum(q, driver.S)
        elif driver.method in ("malenia", "accel_malenia"):
            out = be.collect_harmonic(q, driver.S)
        else:
            out = be.collect_one_each(q)
        if out is None:
            break
        g, s, B, last = out
        be.result.batches.append((tuple(B), last))
        if state is not None:
            state = accelerated_update(state, g, k, driver.gamma, s)
            x = state.x
        else:
            x = x - driver.gamma * g / s
        be.record(x)
        if driver.stop_when is not None and driver.stop_when(x):
            be.result.stopped_by = "condition"
            break
    be.record_last(x)


def _run_async(driver: AlgorithmDriver, sim):
    if not isinstance(sim, (Simulation, EventBackend)):
        raise ValueError("asynchronous SGD needs the event backend")
    x = sim.problem.start()
    sim.record(x)
    for i in range(sim.n):
        sim.ask(i, x)
    for _ in range(driver.K):
        ev = sim.next_gradient()
        if ev is None:
            break
        i, g = ev
        x = x - driver.gamma * g
        sim.record(x)
        sim.ask(i, x)
        if driver.stop_when is not None and driver.stop_when(x):
            sim.result.stopped_by = "condition"
            break
    sim.stop_all()
    sim.record_last(x)


def run_method(driver: AlgorithmDriver, problem: ProblemSpec, profiles: Sequence[PowerProfile],
               seed: int = 0, horizon: float = INFINITY, mode: str = "event",
               **record_kwargs) -> RunResult:
    """Run a driver on the problem; ``mode`` is "event" or "iteration"."""
    if len(profiles) == 0:
        raise ValueError("at least one worker is required")
    if mode == "event":
        sim = Simulation(problem, profiles, seed, horizon, **record_kwargs)
        driver(EventBackend(sim) if driver.method != "async" else sim)
        return sim.finish()
    if mode == "iteration":
        if driver.method == "async":
            raise ValueError("asynchronous SGD is only available in event mode")
        be = IterationBackend(problem, profiles, seed, horizon, **record_kwargs)
        driver(be)
        return be.finish()
    raise ValueError(f"unknown mode {mode!r}")


def minibatch_replay(x0, gamma: float, S: int, gradients) -> list:
    """Plain minibatch SGD x <- x - gamma/S * sum(g) over consecutive groups of S gradients."""
    xs = [np.array(x0, dtype=float)]
    x = xs[0]
    for k in range(len(gradients) // S):
        g = np.zeros_like(x)
        for gi in gradients[k * S:(k + 1) * S]:
            g += gi
        x = x - gamma * g / S
        xs.append(x)
    return xs
