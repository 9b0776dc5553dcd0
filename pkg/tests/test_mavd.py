import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import scalar_quadratic
from magm import mavd
from magm.diagnostics import DiagnosticsTable
from magm.errors import InputError
from magm.problems import make_jos1, make_quadratic_ensemble, pareto_reference, start_point
from magm.simplex import min_norm_element, simplex_grid


def test_selection_single_objective():
    g = np.array([0.3, -1.2])
    sel = mavd.selection(g[:, None], np.array([1.0, 1.0]), 2.0)
    np.testing.assert_array_equal(sel.c_star, g)


def test_selection_zero_velocity_is_min_norm():
    G = np.array([[2.0, 0.0], [0.0, 1.0]])
    sel = mavd.selection(G, np.zeros(2), 3.0)
    np.testing.assert_allclose(sel.c_star, min_norm_element(G), atol=1e-14)


@pytest.mark.parametrize("damping", [0.01, 1.0, 50.0])
def test_selection_segment(damping):
    G = np.array([[1.0, -1.0], [0.0, 0.0]])
    v = np.array([1.0, 0.0])
    sel = mavd.selection(G, v, damping)
    np.testing.assert_allclose(sel.c_star, [1.0, 0.0], atol=1e-14)
    # linear maximiser of <v, c> over a grid of the hull
    scores = simplex_grid(2, 200) @ G.T @ v
    assert v @ sel.c_star >= scores.max() - 1e-12


@given(
    arrays(float, (3, 3), elements=st.floats(-3, 3)),
    arrays(float, 3, elements=st.floats(-3, 3)),
    st.floats(0.01, 10),
)
@settings(max_examples=100, deadline=None)
def test_selection_fixed_point(G, v, damping):
    sel = mavd.selection(G, v, damping)
    w = damping * v + sel.c_star
    from magm.simplex import project_hull

    assert np.linalg.norm(project_hull(G, w) - sel.c_star) <= 1e-9 * (1 + np.linalg.norm(w))


def test_equilibrium_at_critical_point():
    p = make_jos1(2)
    x = np.array([1.0, 1.0])
    dx, dv = mavd.rhs(mavd.initial_ode_state(x, 3.0), p)
    np.testing.assert_array_equal(dx, 0.0)
    np.testing.assert_allclose(dv, 0.0, atol=1e-15)
    samples = mavd.integrate(p, 3.0, x, 20.0)
    assert max(np.linalg.norm(s.x - x) for s in samples) < 1e-12


def reference_avd(alpha, x0, t_end, dt):
    """Uniform-step RK4 for x'' = -(alpha/t) x' - x on the real line."""

    def f(t, z):
        return np.array([z[1], -(alpha / t) * z[1] - z[0]])

    z = np.array([x0, 0.0])
    steps = int(round((t_end - 1.0) / dt))
    h = (t_end - 1.0) / steps
    for i in range(steps):
        t = 1.0 + i * h
        k1 = f(t, z)
        k2 = f(t + h / 2, z + h / 2 * k1)
        k3 = f(t + h / 2, z + h / 2 * k2)
        k4 = f(t + h, z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z[0]


def test_single_objective_matches_reference():
    samples = mavd.integrate(scalar_quadratic(), 3.0, np.array([1.0]), 100.0, dt=1e-3, coarsen=False, sample_every=10**6)
    ref = reference_avd(3.0, 1.0, 100.0, 1e-4)
    assert samples[-1].t == 100.0
    assert abs(samples[-1].x[0] - ref) < 1e-5


def test_fourth_order_on_jos1():
    p = make_jos1(2)
    x0 = start_point(p)
    ends = [mavd.integrate(p, 3.0, x0, 2.0, dt=dt, coarsen=False, sample_every=10**6)[-1].x for dt in (0.02, 0.01, 0.005)]
    order = np.log2(np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2]))
    assert order >= 3.5


def test_step_grid_hits_decades():
    assert mavd.dt_at(5.0, 1e-3) == 1e-3
    assert mavd.dt_at(50.0, 1e-3) == 2e-3
    assert mavd.dt_at(5e6, 1e-3) == 0.064
    assert mavd.dt_at(5e9, 1e-3) == mavd.DT_MAX
    samples = mavd.integrate(make_jos1(2), 2.0, np.array([3.0, -1.0]), 120.0, sample_every=500)
    ts = [s.t for s in samples]
    assert 10.0 in ts and 100.0 in ts and ts[-1] == 120.0 and ts[0] == 1.0


def test_invalid_arguments():
    p = make_jos1(2)
    with pytest.raises(InputError):
        mavd.integrate(p, 0.0, np.zeros(2), 10.0)
    with pytest.raises(InputError):
        mavd.integrate(p, 3.0, np.zeros(2), 1.0)
    with pytest.raises(InputError):
        mavd.selection(np.eye(2), np.zeros(2), 0.0)


def sample(t, x, v):
    return mavd.TrajectorySample(t, np.asarray(x, float), np.asarray(v, float), np.zeros(len(x)), np.ones(1))


def test_continuous_diagnostic_examples():
    p = make_jos1(2)
    x = np.array([0.5, 1.5])
    s = mavd.continuous_diagnostics(p, sample(1.0, x, [0.0, 0.0]), 3.0, x[None, :])
    np.testing.assert_array_equal(s.W, p.values(x))
    assert s.E_per_ref[0] == 0.0
    # alpha = 3 drops the third term
    z = np.array([[2.0, 2.0]])
    t, v = 4.0, np.array([0.1, -0.3])
    s = mavd.continuous_diagnostics(p, sample(t, x, v), 3.0, z)
    m = t * v + 2 * (x - z[0])
    assert s.E_per_ref[0] == pytest.approx(t**2 * s.theta_z_per_ref[0] + 0.5 * m @ m, rel=1e-14)


@pytest.mark.parametrize("alpha", [1.0, 2.0, 3.0, 4.0])
def test_continuous_invariants_short(alpha):
    p = make_quadratic_ensemble(3, 3, 5)
    x0 = start_point(p)
    samples = mavd.integrate(p, alpha, x0, 30.0)
    refs = pareto_reference(p, 16).with_tail(samples[-1].x)
    mavd.attach_diagnostics(p, samples, alpha, refs)
    table = DiagnosticsTable(mavd.trajectory_columns(3, 3, len(refs)), mavd.trajectory_table(samples))
    meta = {"alpha": alpha, "dt": 1e-3, "dt_max": mavd.DT_MAX, "R_hat": p.level_radius_hint(x0)}
    res = {r.name: r.status for r in mavd.continuous_invariants(table, meta)}
    assert "fail" not in res.values(), res
    assert res["lyapunov_decay"] == ("n/a" if alpha > 3 else "pass")
    assert max(s.consistency for s in samples) <= 0.0


def test_tail_displacement():
    samples = [sample(t, [1.0 / t], [0.0]) for t in np.linspace(1, 100, 991)]
    assert mavd.tail_displacement(samples, 100.0) == pytest.approx(1 / 90 - 1 / 100, rel=1e-9)
    with pytest.raises(InputError):
        mavd.tail_displacement(samples, 55.55)


def test_rate_constant():
    assert mavd.rate_constant(3.0, 1.0, 2.0) == pytest.approx(1.0 + 16.0)


def test_sliding_selection_at_rest_is_min_norm():
    p = make_quadratic_ensemble(3, 3, 1)
    x = np.array([0.4, -0.2, 1.0])
    G = p.gradients(x)
    c, w, _ = mavd.sliding_selection(p, x, G, np.zeros(3), 2.0, 1e-3)
    np.testing.assert_allclose(c, min_norm_element(G), atol=1e-12)
    assert w.min() >= 0 and w.sum() == pytest.approx(1.0)


@given(arrays(float, (3, 3), elements=st.floats(-3, 3)), arrays(float, 3, elements=st.floats(-3, 3)))
@settings(max_examples=100, deadline=None)
def test_simplex_qp_against_grid(H_root, q):
    H = H_root.T @ H_root
    theta = mavd._simplex_qp(H, q)
    assert theta.min() >= 0 and abs(theta.sum() - 1) < 1e-12
    grid = simplex_grid(3, 60)
    obj = 0.5 * np.einsum("si,ij,sj->s", grid, H, grid) - grid @ q
    assert 0.5 * theta @ H @ theta - q @ theta <= obj.min() + 1e-9 * (1 + np.abs(obj).max())


@given(
    arrays(float, (2, 3), elements=st.floats(-3, 3)),
    arrays(float, 2, elements=st.floats(-3, 3)),
    st.floats(0.01, 5),
)
@settings(max_examples=100, deadline=None)
def test_sliding_selection_keeps_leader(G, v, damping):
    p = make_quadratic_ensemble(2, 3, 0)
    x = np.zeros(2)
    c, w, band = mavd.sliding_selection(p, x, G, v, damping, 1e-3)
    scores = v @ G
    assert w.min() >= 0 and abs(w.sum() - 1) < 1e-12
    np.testing.assert_allclose(c, G @ w, atol=1e-12)
    # only vertices inside their band may carry weight
    assert np.all(scores[w > 0] >= scores.max() - band[w > 0] - 1e-12)
