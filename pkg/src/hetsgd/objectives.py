"""Test objectives and stochastic gradient oracles.

Includes quadratics, a heterogeneous quadratic split across workers, and
the zero-chain function F_T used by lower-bound constructions together with
its Bernoulli zero-out oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import ndtr

from .bounds import DELTA0, GAMMA_INF, L1, LowerConstants, ProblemConstants
from .power import snapped_floor

SQRT_E = math.sqrt(math.e)
PHI_SCALE = math.sqrt(2 * math.pi * math.e)
PSI_CUTOFF = 1e-8


# -- objectives -------------------------------------------------------------


@dataclass(frozen=True)
class Quadratic:
    """f(x) = L/2 ||x||^2."""

    L: float
    dim: int

    def value(self, x):
        return 0.5 * self.L * float(x @ x)

    def grad(self, x, worker=None):
        return self.L * x

    def f_star(self):
        return 0.0


@dataclass(frozen=True)
class HeterQuadratic:
    """Worker i holds f_i(x) = L/2 ||x - b_i||^2; the objective is their mean."""

    L: float
    centers: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", c)

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def n(self):
        return self.centers.shape[0]

    def local_value(self, x, i):
        d = x - self.centers[i]
        return 0.5 * self.L * float(d @ d)

    def value(self, x):
        return float(np.mean([self.local_value(x, i) for i in range(self.n)]))

    def grad(self, x, worker=None):
        if worker is None:
            return self.L * (x - self.centers.mean(axis=0))
        return self.L * (x - self.centers[worker])

    def f_star(self):
        return self.value(self.centers.mean(axis=0))


@dataclass(frozen=True)
class WorstCaseChain:
    """f(x) = L lam^2 / l1 * F_T(x / lam)."""

    T: int
    lam: float
    L: float

    @property
    def dim(self):
        return self.T

    def value(self, x):
        return self.L * self.lam ** 2 / L1 * worst_case_grad(x / self.lam, self.T)[0]

    def grad(self, x, worker=None):
        return self.L * self.lam / L1 * worst_case_grad(x / self.lam, self.T)[1]

    def f_star(self):
        return -math.inf  # not tracked; only progress matters here


Objective = Union[Quadratic, HeterQuadratic, WorstCaseChain]


# -- oracles ----------------------------------------------------------------


@dataclass(frozen=True)
class Exact:
    pass


@dataclass(frozen=True)
class Gaussian:
    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")


@dataclass(frozen=True)
class ZeroOut:
    p: float

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError("zero-out probability must lie in (0, 1]")


OracleSpec = Union[Exact, Gaussian, ZeroOut]


@dataclass(frozen=True)
class ProblemSpec:
    objective: Objective
    consts: ProblemConstants
    oracle: OracleSpec = field(default_factory=Exact)
    x0: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.objective.dim

    def start(self):
        if self.x0 is None:
            return np.zeros(self.dim)
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.dim,):
            raise ValueError("x0 has the wrong dimension")
        return x0.copy()


# -- the zero-chain function ---------------------------------------------------


def prog(x) -> int:
    """Largest 1-based index of a nonzero coordinate, 0 for the zero vector."""
    nz = np.flatnonzero(np.asarray(x))
    return int(nz[-1]) + 1 if nz.size else 0


def psi(x):
    x = np.asarray(x, dtype=float)
    z = 2 * x - 1
    out = np.zeros_like(x)
    m = z > PSI_CUTOFF
    out[m] = np.exp(1 - 1 / z[m] ** 2)
    return out


def dpsi(x):
    x = np.asarray(x, dtype=float)
    z = 2 * x - 1
    out = np.zeros_like(x)
    m = z > PSI_CUTOFF
    out[m] = np.exp(1 - 1 / z[m] ** 2) * 4 / z[m] ** 3
    return out


def phi(x):
    """sqrt(e) * integral_{-inf}^x exp(-t^2/2) dt."""
    return PHI_SCALE * ndtr(x)


def dphi(x):
    return SQRT_E * np.exp(-0.5 * np.asarray(x, dtype=float) ** 2)


def worst_case_grad(x, T: int):
    """Value and gradient of F_T at x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (T,):
        raise ValueError(f"expected a vector of length {T}, got shape {x.shape}")
    prev, cur = x[:-1], x[1:]
    ps_m, ps_p = psi(-prev), psi(prev)
    ph_m, ph_p = phi(-cur), phi(cur)
    value = -phi(x[0]) + float(np.sum(ps_m * ph_m - ps_p * ph_p))
    g = np.zeros(T)
    g[0] = -dphi(x[0])
    # d/dx_i of the i-th link, i >= 2
    g[1:] += -ps_m * dphi(-cur) - ps_p * dphi(cur)
    # d/dx_{i-1} of the same link
    g[:-1] += -dpsi(-prev) * ph_m - dpsi(prev) * ph_p
    return float(value), g


def scaled_worst_case(consts: ProblemConstants, setup: str = "homog",
                      lower: LowerConstants | None = None, blocks: int = 1) -> ProblemSpec:
    """Scaled chain function whose initial gap fits the budget Delta.

    ``setup="homog"`` returns a live problem with the zero-out oracle.  The
    heterogeneous setup only records the block-structure parameters in
    ``meta``; its dynamics are handled in ``lowerbound``.
    """
    c = consts
    lc = lower or LowerConstants()
    if not c.eps < lc.c_prime * c.L * c.Delta:
        raise ValueError("eps must be smaller than c_prime * L * Delta")
    if setup == "homog":
        lam = math.sqrt(2 * c.eps) * L1 / c.L
        T = int(snapped_floor(c.Delta * c.L / (2 * c.eps * L1 * DELTA0)))
        p = 1.0 if c.sigma2 == 0 else min(2 * c.eps * GAMMA_INF ** 2 / c.sigma2, 1.0)
        meta = {"T": T, "lam": lam, "p": p}
    elif setup == "heter":
        lam = math.sqrt(4 * c.eps * L1 ** 2 / (c.L ** 2 * blocks))
        T = int(snapped_floor(c.Delta * L1 / (c.L * lam ** 2 * blocks * DELTA0)))
        p = 1.0
        meta = {"T": T, "lam": lam, "blocks": blocks, "dim": T * blocks}
    else:
        raise ValueError(f"unknown setup {setup!r}")
    if T < 1:
        raise ValueError("eps too large: the chain would have no coordinates")
    return ProblemSpec(WorstCaseChain(T, lam, c.L), c, ZeroOut(p), None, meta)


# -- stochastic gradients ----------------------------------------------------


def zero_out_oracle(grad, progress: int, p: float, rng: np.random.Generator):
    """Keep coordinates up to ``progress``; scale later ones by Bernoulli(p)/p."""
    if not 0 < p <= 1:
        raise ValueError("zero-out probability must lie in (0, 1]")
    g = np.array(grad, dtype=float)
    if p == 1 or progress >= g.size:
        return g
    xi = rng.random(g.size - progress) < p
    g[progress:] *= xi / p
    return g


def noisy_grad(problem: ProblemSpec, x, rng: np.random.Generator, worker=None):
    """One unbiased stochastic gradient at x (local to ``worker`` for split problems)."""
    g = problem.objective.grad(x, worker)
    return _perturb(problem.oracle, g, x, 1, rng)


def noisy_grad_sum(problem: ProblemSpec, x, count: int, rng: np.random.Generator, worker=None):
    """Sum of ``count`` i.i.d. stochastic gradients at x, drawn in one shot.

    The result has exactly the distribution of summing ``count`` calls to
    noisy_grad; Gaussian noise is aggregated into one Gaussian and zero-out
    masks into binomial counts.
    """
    g = problem.objective.grad(x, worker)
    return _perturb(problem.oracle, g, x, count, rng)


def _perturb(oracle, g, x, count, rng):
    if count == 0:
        return np.zeros_like(g)
    if isinstance(oracle, Exact) or (isinstance(oracle, Gaussian) and oracle.sigma2 == 0):
        return count * g
    if isinstance(oracle, Gaussian):
        sd = math.sqrt(count * oracle.sigma2 / g.size)
        return count * g + sd * rng.standard_normal(g.size)
    if isinstance(oracle, ZeroOut):
        k = prog(x)
        if count == 1:
            return zero_out_oracle(g, k, oracle.p, rng)
        out = count * np.asarray(g, dtype=float)
        if oracle.p < 1 and k < g.size:
            hits = rng.binomial(count, oracle.p, size=g.size - k)
            out[k:] = g[k:] * hits / oracle.p
        return out
    raise TypeError(f"unknown oracle {oracle!r}")
