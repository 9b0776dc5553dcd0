"""Acceptance criteria, one test each, at their stated tolerances.

Every evaluated criterion adds a PASS/FAIL line to the terminal summary.
"""

import pytest

from magm import acceptance

LINES = []


def check(number):
    res = acceptance.evaluate(number)
    LINES.append(res.line())
    print(res.line())
    assert res.passed, res.detail


@pytest.mark.slow
def test_discrete_rate():
    check(1)


@pytest.mark.slow
def test_discrete_lyapunov_inequality():
    check(2)


@pytest.mark.slow
def test_energy_monotone_and_level_containment():
    check(3)


@pytest.mark.slow
def test_step_summability():
    check(4)


@pytest.mark.slow
def test_point_convergence():
    check(5)


@pytest.mark.slow
def test_subproblem_correctness():
    check(6)


def test_single_objective_reduction():
    check(7)


@pytest.mark.slow
def test_continuous_rate_and_lyapunov_decay():
    check(8)


@pytest.mark.slow
def test_continuous_trajectory_convergence():
    check(9)


def test_schedule_properties():
    check(10)


def test_gradient_verification():
    check(11)
