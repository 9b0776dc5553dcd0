import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from magm.errors import InputError, UnsupportedProblemError
from magm.simplex import (
    GradientHull,
    brute_force_subproblem,
    min_norm_element,
    project_hull,
    project_simplex,
    simplex_grid,
    solve_subproblem,
    subproblem_objective,
)

# gradient data: zero or at least 1e-6 in magnitude
finite = st.one_of(st.just(0.0), st.floats(1e-6, 10), st.floats(-10, -1e-6))


@pytest.mark.parametrize(
    "w,expected",
    [([0.5, 0.5], [0.5, 0.5]), ([2.0, -1.0], [1.0, 0.0]), ([0.8, 0.4], [0.7, 0.3])],
)
def test_project_simplex_examples(w, expected):
    np.testing.assert_allclose(project_simplex(np.array(w)), expected, atol=1e-15)


def test_project_simplex_rejects_nan():
    with pytest.raises(InputError):
        project_simplex(np.array([np.nan, 1.0]))


@given(arrays(float, st.integers(1, 6), elements=finite))
def test_project_simplex_is_nearest_grid_point(w):
    p = project_simplex(w)
    assert p.min() >= 0 and abs(p.sum() - 1) < 1e-12
    if w.size <= 3:
        grid = simplex_grid(w.size, 60)
        best = np.min(np.sum((grid - w) ** 2, axis=1))
        assert np.sum((p - w) ** 2) <= best + 1e-12


def test_singleton_hull():
    g = np.array([1.5, -2.0])
    sol = solve_subproblem(g[:, None], np.array([0.3, 0.1]), 0.7)
    np.testing.assert_array_equal(sol.theta, [1.0])
    np.testing.assert_array_equal(sol.direction, g)
    np.testing.assert_array_equal(min_norm_element(g[:, None]), g)
    np.testing.assert_array_equal(project_hull(g[:, None], np.array([9.0, 9.0])), g)


def test_symmetric_pair():
    sol = solve_subproblem(np.eye(2), np.zeros(2), 1.0)
    np.testing.assert_allclose(sol.theta, [0.5, 0.5], atol=1e-14)
    np.testing.assert_allclose(sol.direction, [0.5, 0.5], atol=1e-14)


def test_unequal_pair():
    # stationarity 8 t - 2 (1 - t) = 0 gives t = 0.2
    G = np.array([[2.0, 0.0], [0.0, 1.0]])
    sol = solve_subproblem(G, np.zeros(2), 1.0)
    np.testing.assert_allclose(sol.theta, [0.2, 0.8], atol=1e-14)
    np.testing.assert_allclose(sol.direction, [0.4, 0.8], atol=1e-14)
    p = min_norm_element(G)
    np.testing.assert_allclose(p, [0.4, 0.8], atol=1e-14)
    assert p @ p == pytest.approx(0.8, abs=1e-14)


def test_min_norm_zero_inside():
    np.testing.assert_allclose(min_norm_element(np.array([[1.0, -1.0], [0.0, 0.0]])), [0.0, 0.0], atol=1e-15)


def test_project_hull_examples():
    G = np.array([[1.0, -1.0], [0.0, 0.0]])
    np.testing.assert_allclose(project_hull(G, np.array([0.0, 5.0])), [0.0, 0.0], atol=1e-14)
    H = np.array([[1.0, 0.0, -2.0], [0.0, 3.0, 1.0]])
    w = H.mean(axis=1)
    np.testing.assert_allclose(project_hull(H, w), w, atol=1e-10)


def test_degenerate_zero_columns():
    sol = solve_subproblem(np.zeros((3, 4)), np.zeros(3), 1.0)
    np.testing.assert_allclose(sol.theta, np.full(4, 0.25))
    np.testing.assert_array_equal(sol.direction, np.zeros(3))
    assert sol.degenerate


def test_brute_force_examples():
    G = np.array([[1.0, 2.0], [0.5, -1.0]])
    s = 0.5
    theta = brute_force_subproblem(G, s * G[:, 0], s, 100)
    np.testing.assert_array_equal(theta, [1.0, 0.0])
    assert subproblem_objective(G, s * G[:, 0], s, theta) == 0.0
    np.testing.assert_array_equal(brute_force_subproblem(G[:, :1], np.ones(2), 1.0, 10), [1.0])
    with pytest.raises(UnsupportedProblemError):
        brute_force_subproblem(np.eye(5), np.zeros(5), 1.0, 10)


def test_solver_matches_oracle_m2():
    rng = np.random.default_rng(3)
    for _ in range(50):
        G, v, s = rng.normal(size=(3, 2)), rng.normal(size=3), rng.uniform(0.1, 2)
        sol = solve_subproblem(G, v, s)
        oracle = subproblem_objective(G, v, s, brute_force_subproblem(G, v, s, 1000))
        assert sol.objective <= oracle + 1e-12
        assert oracle - sol.objective <= 1e-4


def test_invalid_inputs():
    with pytest.raises(InputError):
        solve_subproblem(np.eye(2), np.zeros(3), 1.0)
    with pytest.raises(InputError):
        solve_subproblem(np.eye(2), np.zeros(2), 0.0)
    with pytest.raises(InputError):
        GradientHull(np.zeros((2, 2, 2)))


def test_simplex_grid_counts():
    assert simplex_grid(3, 10).shape == (66, 3)
    np.testing.assert_allclose(simplex_grid(3, 10).sum(axis=1), 1.0)


@st.composite
def instances(draw):
    m = draw(st.integers(1, 5))
    n = draw(st.integers(1, 6))
    G = draw(arrays(float, (n, m), elements=finite))
    v = draw(arrays(float, n, elements=finite))
    s = draw(st.floats(0.05, 5.0))
    return G, v, s


@given(instances())
@settings(max_examples=200, deadline=None)
def test_subproblem_optimality(inst):
    G, v, s = inst
    sol = solve_subproblem(G, v, s)
    assert sol.theta.min() >= 0 and abs(sol.theta.sum() - 1) < 1e-12
    np.testing.assert_allclose(sol.direction, G @ sol.theta)
    # first-order condition: no vertex improves the objective direction
    grad = 2 * s * G.T @ (s * sol.direction - v)
    scale = 1.0 + np.abs(grad).max() + s * s * np.abs(G).max() ** 2
    assert grad.min() >= grad @ sol.theta - 1e-9 * scale
    if G.shape[1] <= 3:
        oracle = subproblem_objective(G, v, s, brute_force_subproblem(G, v, s, 60))
        assert sol.objective <= oracle + 1e-9 * (1 + oracle)


@given(instances())
@settings(max_examples=100, deadline=None)
def test_projection_variational_inequality(inst):
    G, w, _ = inst
    p = project_hull(G, w)
    # <w - p, g - p> <= 0 for every column g
    lhs = (G - p[:, None]).T @ (w - p)
    assert lhs.max() <= 1e-8 * (1 + np.abs(G).max() + np.abs(w).max()) ** 2
