"""Event-driven virtual-time execution of the multiple-oracle protocol.

Each worker owns an oracle that is either idle or busy computing a gradient
at a stored point.  The simulation only ever moves the clock forward to the
next completion event, so a run is a deterministic function of
(problem, profiles, algorithm, seed).
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .objectives import ProblemSpec, noisy_grad
from .power import INFINITY, SNAP_TOL, PowerProfile, completion_time, snap, work


class ProtocolViolation(RuntimeError):
    """Raised when an algorithm tries to move the clock backwards."""


@dataclass
class OracleState:
    s_t: float = 0.0
    s_x: Optional[np.ndarray] = None
    s_q: int = 0

    @property
    def busy(self) -> bool:
        return self.s_q == 1


def oracle_step(state: OracleState, t: float, x, c: int, profile: PowerProfile,
                problem: ProblemSpec, rng: np.random.Generator, worker=None):
    """One call of a worker's oracle at time t with control flag c.

    Returns the new state and the output vector (zero unless a gradient
    finished).
    """
    dim = problem.dim
    if c == 1:
        return OracleState(), np.zeros(dim)
    if not state.busy:
        return OracleState(float(t), np.array(x, dtype=float, copy=True), 1), np.zeros(dim)
    if t < state.s_t:
        raise ProtocolViolation("oracle queried before its computation started")
    if snap(work(profile, state.s_t, t)) < 1:
        return state, np.zeros(dim)
    return OracleState(), noisy_grad(problem, state.s_x, rng, worker)


@dataclass
class RunResult:
    """Trajectory rows are (k, t_k, grad_sq, f_value)."""

    trajectory: List[tuple] = field(default_factory=list)
    grad_counts: List[int] = field(default_factory=list)
    total_time: float = 0.0
    seed: int = 0
    iterates: Optional[list] = None
    batches: list = field(default_factory=list)
    gradient_log: Optional[list] = None
    stopped_by: str = "budget"

    @property
    def times(self):
        return [row[1] for row in self.trajectory]


def worker_streams(seed: int, n: int) -> list:
    """Independent counter-based generators: one per worker plus one for the server."""
    children = np.random.SeedSequence(seed).spawn(n + 1)
    return [np.random.Generator(np.random.Philox(s)) for s in children]


class Recorder:
    """Trajectory bookkeeping shared by every execution backend."""

    def __init__(self, problem: ProblemSpec, n: int, seed: int = 0, keep_iterates: bool = False,
                 log_gradients: bool = False, record_every: int = 1):
        self.problem = problem
        self.clock = 0.0
        self.record_every = max(1, int(record_every))
        self.result = RunResult(grad_counts=[0] * n, seed=seed,
                                iterates=[] if keep_iterates else None,
                                gradient_log=[] if log_gradients else None)
        self._k = 0
        self.truncated = False

    def record(self, x, force: bool = False):
        k = self._k
        self._k += 1
        if force or k % self.record_every == 0:
            obj = self.problem.objective
            g = obj.grad(x)
            self.result.trajectory.append((k, self.clock, float(g @ g), float(obj.value(x))))
        if self.result.iterates is not None:
            self.result.iterates.append(np.array(x, copy=True))

    def record_last(self, x):
        """Make sure the final iterate is in a thinned trajectory."""
        if self._k and (self._k - 1) % self.record_every != 0:
            obj = self.problem.objective
            g = obj.grad(x)
            self.result.trajectory.append((self._k - 1, self.clock, float(g @ g), float(obj.value(x))))

    def finish(self) -> RunResult:
        self.result.total_time = self.clock
        if self.truncated:
            self.result.stopped_by = "horizon"
        return self.result


class Simulation(Recorder):
    """Owns the clock, the oracles and the completion-event queue.

    Algorithms interact through ``ask``, ``next_gradient``, ``stop_all``
    and ``record``; every interaction is an oracle call at the current
    clock, which is how the monotone-time requirement is enforced.
    """

    def __init__(self, problem: ProblemSpec, profiles: Sequence[PowerProfile], seed: int = 0,
                 horizon: float = INFINITY, **record_kwargs):
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        self.profiles = list(profiles)
        self.n = len(self.profiles)
        super().__init__(problem, self.n, seed, **record_kwargs)
        self.horizon = horizon
        self.states = [OracleState() for _ in range(self.n)]
        self._gen = [0] * self.n
        self._queue: list = []
        self.rngs = worker_streams(seed, self.n)

    def _call(self, t, i, c, x):
        if t < self.clock:
            raise ProtocolViolation(f"time moved backwards: {t} < {self.clock}")
        self.clock = t
        self.states[i], g = oracle_step(self.states[i], t, x, c, self.profiles[i],
                                        self.problem, self.rngs[i], i)
        return g

    def advance(self, t: float):
        if t < self.clock:
            raise ProtocolViolation(f"time moved backwards: {t} < {self.clock}")
        self.clock = t

    def ask(self, i: int, x):
        """Start worker i on a gradient at x (it must be idle)."""
        if self.states[i].busy:
            raise ProtocolViolation(f"worker {i} is already busy")
        self._call(self.clock, i, 0, x)
        done = completion_time(self.profiles[i], self.clock)
        self._gen[i] += 1
        if math.isfinite(done):
            heapq.heappush(self._queue, (done, i, self._gen[i]))

    def next_gradient(self):
        """Advance to the next completion; return (worker, gradient) or None past the horizon."""
        while self._queue:
            t, i, gen = self._queue[0]
            if gen != self._gen[i] or not self.states[i].busy:
                heapq.heappop(self._queue)
                continue
            if t > self.horizon:
                break
            # completions within rounding of t are simultaneous; lowest worker first
            tol = SNAP_TOL * max(1.0, abs(t))
            j = min((k for k, (te, w, g) in enumerate(self._queue)
                     if te <= t + tol and g == self._gen[w] and self.states[w].busy),
                    key=lambda k: self._queue[k][1])
            i = self._queue[j][1]
            self._queue[j] = self._queue[-1]
            self._queue.pop()
            heapq.heapify(self._queue)
            x = self.states[i].s_x
            g = self._call(t, i, 0, x)
            if self.states[i].busy:
                raise RuntimeError("completion event fired before the work was done")
            self.result.grad_counts[i] += 1
            if self.result.gradient_log is not None:
                self.result.gradient_log.append((i, t, g.copy()))
            return i, g
        self.truncated = True
        if math.isfinite(self.horizon):
            self.clock = max(self.clock, self.horizon)
        return None

    def stop_all(self):
        for i, st in enumerate(self.states):
            if st.busy:
                self._call(self.clock, i, 1, None)
                self._gen[i] += 1

    def idle(self, i: int) -> bool:
        return not self.states[i].busy


Algorithm = Callable[[Simulation], None]


def run_protocol(problem: ProblemSpec, algorithm, profiles: Sequence[PowerProfile],
                 horizon: float = INFINITY, seed: int = 0, **sim_kwargs) -> RunResult:
    """Run ``algorithm(sim)`` to completion or until the horizon."""
    sim = Simulation(problem, profiles, seed, horizon, **sim_kwargs)
    algorithm(sim)
    return sim.finish()
