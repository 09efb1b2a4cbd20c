"""The fourteen acceptance criteria at their stated tolerances.

Each test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary so they show up without ``-s``.
"""
import time

import pytest

from hetsgd.acceptance import CRITERIA, run_criterion

RESULTS = []


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    t0 = time.perf_counter()
    r = run_criterion(number, seed=0)
    line = (f"[{'PASS' if r.passed else 'FAIL'}] criterion {r.number:2d} {r.name}: {r.detail} "
            f"({time.perf_counter() - t0:.1f}s)")
    RESULTS.append(line)
    print(line)
    assert r.passed, line
