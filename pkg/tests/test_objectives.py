import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from hetsgd.bounds import ProblemConstants
from hetsgd.objectives import (Exact, Gaussian, HeterQuadratic, ProblemSpec, Quadratic,
                               WorstCaseChain, ZeroOut, noisy_grad, noisy_grad_sum, phi, prog,
                               psi, scaled_worst_case, worst_case_grad, zero_out_oracle)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


# -- prog ----------------------------------------------------------------------


def test_prog_examples():
    assert prog([0, 0, 0]) == 0
    assert prog([1, 0, 2, 0]) == 3
    x = np.zeros(7)
    x[-1] = 1e-300
    assert prog(x) == 7


# -- the chain function -----------------------------------------------------------


def test_chain_at_origin():
    val, g = worst_case_grad(np.zeros(5), 5)
    assert g[0] == pytest.approx(-math.sqrt(math.e), rel=1e-14)
    assert g[0] == pytest.approx(-1.64872, abs=1e-5)
    assert np.all(g[1:] == 0)
    assert val == pytest.approx(-2.06637, abs=1e-5)


def test_psi_points():
    assert psi(np.array([1.0]))[0] == 1.0
    assert psi(np.array([0.5]))[0] == 0.0
    assert psi(np.array([-3.0]))[0] == 0.0


@pytest.mark.parametrize("x", [-6.0, -1.3, 0.0, 0.4, 2.0, 5.5])
def test_phi_against_quadrature(x):
    ref = quad(lambda t: math.sqrt(math.e) * math.exp(-t * t / 2), -np.inf, x, epsabs=1e-14)[0]
    assert phi(x) == pytest.approx(ref, abs=1e-12)
    assert phi(0.0) == pytest.approx(math.sqrt(math.e) * math.sqrt(math.pi / 2), rel=1e-14)


def test_chain_dimension_mismatch():
    with pytest.raises(ValueError):
        worst_case_grad(np.zeros(3), 4)


def _points(seed, count, T):
    r = rng(seed)
    return r.uniform(-2, 2, size=(count, T))


def test_chain_sampled_lipschitz():
    T = 20
    X = _points(1, 10_000, T)
    Y = X + rng(2).normal(scale=0.05, size=X.shape)
    worst = 0.0
    for x, y in zip(X, Y):
        gx, gy = worst_case_grad(x, T)[1], worst_case_grad(y, T)[1]
        worst = max(worst, np.linalg.norm(gx - gy) / np.linalg.norm(x - y))
    assert worst <= 152


def test_chain_initial_gap():
    T = 20
    f0 = worst_case_grad(np.zeros(T), T)[0]
    lowest = min(worst_case_grad(x, T)[0] for x in _points(3, 10_000, T))
    # also try points near the descent path x = (1, 1, ..., 1) scaled up
    lowest = min(lowest, min(worst_case_grad(np.full(T, a), T)[0] for a in np.linspace(0.5, 5, 50)))
    assert f0 - lowest <= 12 * T


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.data())
def test_chain_progress_and_bounds(T, data):
    k = data.draw(st.integers(0, T))
    x = np.zeros(T)
    vals = data.draw(st.lists(st.floats(-3, 3, allow_subnormal=False), min_size=k, max_size=k))
    x[:k] = vals
    _, g = worst_case_grad(x, T)
    assert prog(g) <= prog(x) + 1
    assert np.max(np.abs(g)) <= 23
    if prog(x) < T:
        assert np.linalg.norm(g) > 1


def test_chain_finite_differences():
    T, h = 20, 1e-6
    r = rng(4)
    checked = 0
    while checked < 100:
        x = r.uniform(-2, 2, size=T)
        if np.any(np.abs(2 * np.abs(x) - 1) <= 1e-3):
            continue
        checked += 1
        g = worst_case_grad(x, T)[1]
        fd = np.array([(worst_case_grad(x + h * e, T)[0] - worst_case_grad(x - h * e, T)[0]) / (2 * h)
                       for e in np.eye(T)])
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


# -- scaling ---------------------------------------------------------------------


def test_scaled_chain_identity():
    # L = 304 and eps = 2 make lam = 1, so f = 2 F_T
    c = ProblemConstants(L=152 * 2, Delta=100, sigma2=1, eps=2)
    prob = scaled_worst_case(c)
    assert prob.meta["lam"] == pytest.approx(1.0)
    x = rng(5).uniform(-1, 1, size=prob.dim)
    assert prob.objective.value(x) == pytest.approx(2 * worst_case_grad(x, prob.dim)[0], rel=1e-12)
    assert np.allclose(prob.objective.grad(x), 2 * worst_case_grad(x, prob.dim)[1], rtol=1e-12)


def test_scaled_chain_length():
    assert scaled_worst_case(ProblemConstants(L=1, Delta=12 * 152 * 2, eps=1)).meta["T"] == 1
    assert scaled_worst_case(ProblemConstants(L=1, Delta=12 * 152 * 4, eps=1)).meta["T"] == 2


def test_scaled_chain_noise_probability():
    c = ProblemConstants(L=1, Delta=1e5, sigma2=0, eps=1)
    assert scaled_worst_case(c).oracle == ZeroOut(1.0)
    c = ProblemConstants(L=1, Delta=1e5, sigma2=5290, eps=1)
    assert scaled_worst_case(c).oracle.p == pytest.approx(0.2)


def test_scaled_chain_gap_within_budget():
    c = ProblemConstants(L=2, Delta=5e4, sigma2=1, eps=0.5)
    prob = scaled_worst_case(c)
    T = prob.meta["T"]
    # f(0) - inf f <= L lam^2 / l1 * 12 T <= Delta
    assert c.L * prob.meta["lam"] ** 2 / 152 * 12 * T <= c.Delta


def test_scaled_chain_rejects_large_eps():
    with pytest.raises(ValueError):
        scaled_worst_case(ProblemConstants(L=1, Delta=1, eps=1))
    with pytest.raises(ValueError):
        scaled_worst_case(ProblemConstants(L=1, Delta=100, eps=1))  # T would be 0


def test_heter_setup_records_blocks():
    prob = scaled_worst_case(ProblemConstants(L=1, Delta=1e6, eps=0.1, sigma2=4), "heter", blocks=4)
    assert prob.meta["blocks"] == 4
    assert prob.meta["dim"] == 4 * prob.meta["T"]


# -- oracles -------------------------------------------------------------------


def test_zero_out_trivial_cases():
    g = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(zero_out_oracle(g, 0, 1.0, rng()), g)
    assert np.array_equal(zero_out_oracle(np.ones(2), 2, 0.3, rng()), np.ones(2))
    for p in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            zero_out_oracle(g, 0, p, rng())


def test_zero_out_moments():
    r = rng(6)
    g = np.array([0.0, 2.0])
    G = np.array([zero_out_oracle(g, 0, 0.5, r) for _ in range(100_000)])
    se = G[:, 1].std(ddof=1) / math.sqrt(len(G))
    assert abs(G[:, 1].mean() - 2) <= 4 * se
    assert G[:, 1].var(ddof=1) == pytest.approx(4.0, rel=0.05)
    assert np.all(G[:, 0] == 0)


def test_noisy_grad_examples():
    x = np.array([1.0, -2.0, 0.5])
    q = Quadratic(1.0, 3)
    c = ProblemConstants()
    assert np.array_equal(noisy_grad(ProblemSpec(q, c, Exact()), x, rng()), x)
    assert np.array_equal(noisy_grad(ProblemSpec(q, c, Gaussian(0)), x, rng()), x)


def test_gaussian_total_variance():
    prob = ProblemSpec(Quadratic(1.0, 2), ProblemConstants(sigma2=4), Gaussian(4))
    x = np.array([0.3, -0.7])
    r = rng(7)
    dev = np.array([noisy_grad(prob, x, r) - x for _ in range(100_000)])
    assert np.mean(np.sum(dev ** 2, axis=1)) == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("oracle", [Gaussian(3.0), ZeroOut(0.3)])
def test_batched_noise_matches_repeated_draws(oracle):
    T = 6
    if isinstance(oracle, ZeroOut):
        prob = ProblemSpec(WorstCaseChain(T, 1.0, 152.0), ProblemConstants(), oracle)
        x = np.array([1.0, 1.0, 0, 0, 0, 0])
    else:
        prob = ProblemSpec(Quadratic(1.0, T), ProblemConstants(sigma2=3), oracle)
        x = np.linspace(-1, 1, T)
    count, reps = 7, 20_000
    r1, r2 = rng(8), rng(9)
    A = np.array([noisy_grad_sum(prob, x, count, r1) for _ in range(reps)])
    B = np.array([sum(noisy_grad(prob, x, r2) for _ in range(count)) for _ in range(reps)])
    se = np.sqrt(A.var(axis=0) / reps + B.var(axis=0) / reps)
    assert np.all(np.abs(A.mean(axis=0) - B.mean(axis=0)) <= 4 * se + 1e-12)
    nz = B.var(axis=0) > 0
    assert np.allclose(A.var(axis=0)[nz], B.var(axis=0)[nz], rtol=0.08)
    assert np.all(A.var(axis=0)[~nz] == 0)


def test_batched_noise_zero_count():
    prob = ProblemSpec(Quadratic(1.0, 2), ProblemConstants(sigma2=1), Gaussian(1))
    assert np.array_equal(noisy_grad_sum(prob, np.ones(2), 0, rng()), np.zeros(2))


def test_oracle_validation():
    with pytest.raises(ValueError):
        Gaussian(-1)
    with pytest.raises(ValueError):
        ZeroOut(0)


# -- split objectives ----------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 1000))
def test_heter_quadratic_split(n, d, seed):
    r = rng(seed)
    centers = r.normal(size=(n, d))
    obj = HeterQuadratic(2.0, centers)
    x = r.normal(size=d)
    local = [obj.local_value(x, i) for i in range(n)]
    assert sum(local) == pytest.approx(n * obj.value(x), rel=1e-12)
    assert np.allclose(np.mean([obj.grad(x, i) for i in range(n)], axis=0), obj.grad(x))
    assert obj.f_star() <= obj.value(x) + 1e-12
    assert np.allclose(obj.grad(centers.mean(axis=0)), 0)


def test_problem_start():
    prob = ProblemSpec(Quadratic(1, 3), ProblemConstants())
    assert np.array_equal(prob.start(), np.zeros(3))
    with pytest.raises(ValueError):
        ProblemSpec(Quadratic(1, 3), ProblemConstants(), x0=np.ones(2)).start()
