"""Acceptance gate: every numbered criterion at its full size and tolerance."""

import os
from concurrent.futures import ProcessPoolExecutor

import pytest

from zerocross import acceptance as A

from .conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="module")
def map_fn():
    jobs = os.cpu_count() or 1
    if jobs == 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield pool.map


def _report(result):
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line


@pytest.fixture(scope="module")
def random_invariants(map_fn):
    return {r.number: r for r in A.check_random_invariants(200, 5, map_fn=map_fn)}


@pytest.mark.slow
def test_criterion_01_crossings_never_increase(random_invariants):
    _report(random_invariants[1])


@pytest.mark.slow
def test_criterion_02_sign_sequences_shrink(random_invariants):
    _report(random_invariants[2])


@pytest.mark.slow
def test_criterion_03_conservation_and_domination(random_invariants):
    _report(random_invariants[3])


def test_criterion_04_counter_matches_oracles():
    _report(A.check_counter_oracle(1000))


@pytest.mark.slow
def test_criterion_05_sampling_never_exceeds_initial_crossings():
    _report(A.check_sampling_bound(50, 10_000))


@pytest.mark.slow
def test_criterion_06_brownian_convergence(map_fn):
    _report(A.check_brownian_convergence(100_000, map_fn=map_fn))


@pytest.mark.slow
def test_criterion_07_three_bump(map_fn):
    _report(A.check_three_bump(map_fn=map_fn))


@pytest.mark.slow
def test_criterion_08_particles_match_forward_equation(map_fn):
    _report(A.check_pde_mc(n=100_000, reps=20, map_fn=map_fn))


def test_criterion_09_jump_walk_counterexample():
    _report(A.check_counterexample())


@pytest.mark.slow
def test_criterion_10_martingales(map_fn):
    _report(A.check_martingales(250, map_fn=map_fn))


def test_criterion_11_kappa_shift():
    _report(A.check_kappa_shift())
