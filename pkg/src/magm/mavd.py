"""Inertial multiobjective dynamics with vanishing damping ``alpha / t``.

The second-order system ``(alpha/t) x' + proj_{C(x) + x''}(0) = 0`` defines
the acceleration implicitly. Writing ``x'' = -(alpha/t) v - c`` turns it into
the fixed point ``c = proj_C((alpha/t) v + c)``, whose solutions are exactly
the maximisers of ``<v, .>`` over the gradient hull ``C``. A static tie is
broken by the min-norm point of the face of maximisers; at ``v = 0`` that
face is the whole hull, giving the steepest-descent direction. Along the
trajectory a tie can persist (a sliding mode), and the integrator then picks
the face point that keeps it, see :func:`sliding_selection`.

Integration is classical fixed-step RK4 from ``x(1) = x0, x'(1) = 0`` with the
step doubled every decade of ``t``.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DivergenceError, InputError, SubproblemError
from .problems import ReferenceSet
from .simplex import DEFAULT_TOL, _solve, project_hull

FIXED_POINT_CAP = 10_000
DT_MAX = 0.1
SLACK_FACTOR = 10.0


@dataclass(frozen=True)
class OdeState:
    t: float
    x: np.ndarray
    v: np.ndarray
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InputError(f"alpha must be positive, got {self.alpha}")
        if not self.t >= 1.0:
            raise InputError(f"t must be >= 1, got {self.t}")


def initial_ode_state(x0, alpha):
    x0 = np.array(x0, dtype=float).ravel()
    return OdeState(1.0, x0, np.zeros_like(x0), float(alpha))


@dataclass
class TrajectorySample:
    t: float
    x: np.ndarray
    v: np.ndarray
    acceleration: np.ndarray
    selection_weights: np.ndarray
    dt: float = np.nan
    W: Optional[np.ndarray] = None
    E_per_ref: Optional[np.ndarray] = None
    theta_z_per_ref: Optional[np.ndarray] = None
    merit: float = np.nan
    consistency: float = 0.0


class Selection(NamedTuple):
    c_star: np.ndarray
    weights: np.ndarray
    residual: float


def _face_min_norm(G, face):
    m = G.shape[1]
    weights = np.zeros(m)
    idx = np.flatnonzero(face)
    if idx.size == 1:
        weights[idx[0]] = 1.0
        return G[:, idx[0]].copy(), weights
    if idx.size == 2:
        g1, g2 = G[:, idx[0]], G[:, idx[1]]
        d = g1 - g2
        dd = d @ d
        lam = 0.0 if dd == 0 else min(1.0, max(0.0, -(g2 @ d) / dd))
        weights[idx] = lam, 1.0 - lam
        return g2 + lam * d, weights
    theta, _, _ = _solve(G[:, idx], np.zeros(G.shape[0]), DEFAULT_TOL)
    weights[idx] = theta
    return G[:, idx] @ theta, weights


def _select(G, v, band):
    """Min-norm point of the face ``{i : <v, g_i> >= max_j <v, g_j> - band_i}``."""
    if G.shape[1] == 1:
        return G[:, 0].copy(), np.ones(1)
    scores = v @ G
    return _face_min_norm(G, scores >= scores.max() - band)


def _fixed_point_residual(G, v, damping, c):
    r = c - project_hull(G, damping * v + c)
    return float(np.sqrt(r @ r))


def selection(hull, v, damping, tol=DEFAULT_TOL, tie_tol=None):
    """Resolve ``c = proj_C(damping v + c)``.

    Parameters
    ----------
    hull : array_like or GradientHull
        Gradient columns ``(n, m)``.
    v : array_like
        Velocity.
    damping : float
        ``alpha / t``, positive.
    tol : float
        Fixed-point tolerance, relative to ``1 + ||damping v + c||``.
    tie_tol : float, optional
        Score band defining the maximising face. Defaults to
        ``tol (1 + ||v||)(1 + max ||g_i||)``.

    Returns
    -------
    Selection
        ``c_star``, its simplex weights and the fixed-point residual.

    Notes
    -----
    The face rule is exact. If its candidate misses the tolerance (possible
    only with a wide ``tie_tol``) the solver falls back to the averaged
    iteration ``c <- (c + proj_C(damping v + c)) / 2``.
    """
    G = hull.columns if hasattr(hull, "columns") else np.atleast_2d(np.asarray(hull, dtype=float))
    if G.ndim != 2:
        raise InputError("hull must be an (n, m) array")
    v = np.asarray(v, dtype=float).ravel()
    if v.shape != (G.shape[0],):
        raise InputError(f"v has shape {v.shape}, expected ({G.shape[0]},)")
    if not damping > 0:
        raise InputError(f"damping must be positive, got {damping}")
    gmax = float(np.sqrt((G * G).sum(axis=0).max()))
    if tie_tol is None:
        tie_tol = tol * (1.0 + np.sqrt(v @ v)) * (1.0 + gmax)
    c, weights = _select(G, v, tie_tol)
    res = _fixed_point_residual(G, v, damping, c)
    scale = lambda c: 1.0 + np.sqrt((damping * v + c) @ (damping * v + c))  # noqa: E731
    if res <= tol * scale(c):
        return Selection(c, weights, res)

    best_c, best_res = c, res
    for it in range(FIXED_POINT_CAP):
        c = 0.5 * (c + project_hull(G, damping * v + c))
        if it % 10 == 9:
            res = _fixed_point_residual(G, v, damping, c)
            if res < best_res:
                best_c, best_res = c, res
            if res <= tol * scale(c):
                break
    if best_res > tol * scale(best_c):
        raise SubproblemError(f"selection fixed point: residual {best_res:.3e}", best_residual=best_res)
    theta, _, _ = _solve(G, best_c, DEFAULT_TOL)
    return Selection(best_c, theta, best_res)


def rhs(state, problem, tol=DEFAULT_TOL):
    """``(x', v') = (v, -(alpha/t) v - c*)``."""
    d = state.alpha / state.t
    sel = selection(problem.gradients(state.x), state.v, d, tol)
    return state.v.copy(), -d * state.v - sel.c_star


FD_HVP = np.finfo(float).eps ** (1.0 / 3.0)


def curvature(problem, x, v):
    """``<v, H_j(x) v>`` for every objective.

    Uses the problem's ``curvature_fn`` when present, otherwise central
    differences of the gradients along ``v``.
    """
    if problem.curvature_fn is not None:
        return np.asarray(problem.curvature_fn(x, v), dtype=float)
    nv = float(np.sqrt(v @ v))
    if nv == 0.0:
        return np.zeros(problem.m)
    e = FD_HVP * (1.0 + float(np.sqrt(x @ x))) / nv
    grad = problem.gradients
    return (v @ (grad(x + e * v) - grad(x - e * v))) / (2.0 * e)


def _simplex_qp(H, q):
    """``argmin 0.5 theta'H theta - q'theta`` over the simplex by support enumeration."""
    k = H.shape[0]
    K = np.ones((k + 1, k + 1))
    K[:k, :k] = H
    K[k, k] = 0.0
    try:
        full = np.linalg.solve(K, np.append(q, 1.0))[:k]
        if full.min() >= 0.0:
            return full
    except np.linalg.LinAlgError:
        pass
    best, best_obj = None, np.inf
    for mask in range(1, 2**k):
        idx = [j for j in range(k) if mask >> j & 1]
        r = len(idx)
        K = np.zeros((r + 1, r + 1))
        K[:r, :r] = H[np.ix_(idx, idx)]
        K[:r, r] = K[r, :r] = 1.0
        rhs = np.concatenate([q[idx], [1.0]])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0][:r]
        if sol.min() < -1e-12:
            continue
        theta = np.zeros(k)
        theta[idx] = np.maximum(sol, 0.0)
        theta /= theta.sum()
        obj = 0.5 * theta @ H @ theta - q @ theta
        if best is None or obj < best_obj - 1e-15 * (1.0 + abs(best_obj)):
            best, best_obj = theta, obj
    return best


def _sliding_pair(G, v, damping, h, tol, curv):
    # the m = 2 case of sliding_selection in scalar arithmetic on the Gram matrix
    s0, s1 = (v @ G).tolist()
    (h00, h01), (_, h11) = (G.T @ G).tolist()
    c0, c1 = curv.tolist()
    if s0 >= s1:
        i, j, gap, hii, hjj, ci, cj = 0, 1, s0 - s1, h00, h11, c0, c1
    else:
        i, j, gap, hii, hjj, ci, cj = 1, 0, s1 - s0, h11, h00, c1, c0
    closing = damping * gap + hii - h01 + cj - ci
    floor = tol * (1.0 + math.sqrt(v @ v)) * (1.0 + math.sqrt(hii))
    band = np.empty(2)
    band[i] = floor
    band[j] = floor + h * max(closing, 0.0)
    weights = np.zeros(2)
    if gap > band[j]:
        weights[i] = 1.0
        return G[:, i], weights, band
    dd = hii - 2.0 * h01 + hjj
    lam = 0.5 if dd <= 0 else min(1.0, max(0.0, (ci - cj + gap / h - h01 + hjj) / dd))
    weights[i], weights[j] = lam, 1.0 - lam
    return lam * G[:, i] + (1.0 - lam) * G[:, j], weights, band


def sliding_selection(problem, x, G, v, damping, h, tol=DEFAULT_TOL):
    """Selection used by the integrator, consistent over a step of size ``h``.

    The face holds the maximisers of ``<v, g_j>`` up to a per-vertex band:
    a vertex whose score would catch up with the leader within one step is
    included. On that face the point ``c = G theta`` minimises
    ``0.5 |G theta|^2 - rho' theta`` with
    ``rho_j = <v, H_j v> - gap_j / h`` and ``gap_j`` the score deficit to the
    leader. The gap of every supporting vertex then obeys
    ``gap' = -(damping + 1/h) gap``, so ties form within a step and persist
    instead of chattering, and a vertex left out of the support falls
    behind. With equal curvatures and no gaps (in particular ``v = 0``) this
    is the min-norm point of the face.

    Returns
    -------
    c, weights, band
    """
    m = G.shape[1]
    if m == 1:
        return G[:, 0], np.ones(1), np.zeros(1)
    curv = curvature(problem, x, v)
    if m == 2:
        return _sliding_pair(G, v, damping, h, tol, curv)
    scores = v @ G
    i = int(np.argmax(scores))
    gi = G[:, i]
    rate = (-damping * v - gi) @ G + curv
    floor = tol * (1.0 + np.sqrt(v @ v)) * (1.0 + np.sqrt(gi @ gi))
    band = floor + h * np.maximum(rate - rate[i], 0.0)
    face = scores >= scores[i] - band
    weights = np.zeros(m)
    if face.sum() == 1:
        weights[i] = 1.0
        return gi, weights, band
    idx = np.flatnonzero(face)
    Gf = G[:, idx]
    # gap feedback: an admitted vertex closes on the leader within about one step
    rho = curv[idx] - (scores[i] - scores[idx]) / h
    if idx.size == 2:
        g1, g2 = Gf[:, 0], Gf[:, 1]
        d = g1 - g2
        dd = d @ d
        lam = 0.5 if dd == 0 else min(1.0, max(0.0, (rho[0] - rho[1] - g2 @ d) / dd))
        theta = np.array([lam, 1.0 - lam])
    else:
        theta = _simplex_qp(Gf.T @ Gf, rho)
    weights[idx] = theta
    return Gf @ theta, weights, band


def dt_at(t, dt0, coarsen=True, dt_max=DT_MAX):
    """Step size used at time ``t``: ``dt0`` doubled per completed decade, capped."""
    if not coarsen:
        return dt0
    decade = int(np.floor(np.log10(t) + 1e-12))
    return min(dt0 * 2.0**decade, dt_max)


def _segments(t_end, dt0, coarsen, dt_max):
    """``(t_start, t_stop, steps)`` pieces landing exactly on decade boundaries."""
    edges = [1.0]
    if coarsen:
        d = 10.0
        while d < t_end:
            edges.append(d)
            d *= 10.0
    edges.append(float(t_end))
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        h = dt_at(lo, dt0, coarsen, dt_max)
        steps = max(1, int(np.ceil((hi - lo) / h - 1e-9)))
        out.append((lo, hi, steps))
    return out


def _sample(problem, t, x, v, alpha, h, Z):
    G = problem.gradients(x)
    d = alpha / t
    c, w, band = sliding_selection(problem, x, G, v, d, h)
    acc = -d * v - c
    s = TrajectorySample(float(t), x.copy(), v.copy(), acc, w, float(h))
    # linear-maximiser property of the accepted selection, beyond its own band
    scores = v @ G
    face = scores >= scores.max() - band
    s.consistency = float(scores.max() - v @ c - band[face].max())
    if Z is not None:
        continuous_diagnostics(problem, s, alpha, Z)
    return s


def integrate(problem, alpha, x0, t_end, dt=1e-3, sample_every=10, refs=None, coarsen=True, dt_max=DT_MAX):
    """RK4 integration of the damped inertial system from ``t = 1`` to ``t_end``.

    Parameters
    ----------
    problem : ObjectiveBundle
    alpha : float
        Damping parameter, positive.
    x0 : array_like
        ``x(1)``; the initial velocity is zero.
    t_end : float
        Final time, ``> 1``.
    dt : float
        Step size on ``[1, 10)``; doubled on each later decade (when
        ``coarsen``) up to ``dt_max``. Steps are shrunk slightly so that
        decade boundaries and ``t_end`` are hit exactly.
    sample_every : int
        Record a sample every this many steps. The start, each decade
        boundary and ``t_end`` are always recorded.
    refs : ReferenceSet, optional
        When given, every sample carries the continuous diagnostics.

    Returns
    -------
    list of TrajectorySample

    Raises
    ------
    DivergenceError
        The state became non-finite; ``last_sample`` is the last finite one.
    """
    if not alpha > 0:
        raise InputError(f"alpha must be positive, got {alpha}")
    if not t_end > 1:
        raise InputError(f"t_end must exceed 1, got {t_end}")
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    if int(sample_every) < 1:
        raise InputError(f"sample_every must be >= 1, got {sample_every}")
    x = np.array(x0, dtype=float).ravel()
    if x.shape != (problem.n,):
        raise InputError(f"x0 has shape {x.shape}, expected ({problem.n},)")
    Z = None
    if refs is not None:
        Z = refs.points if isinstance(refs, ReferenceSet) else np.atleast_2d(np.asarray(refs, dtype=float))
    n = x.size
    z = np.concatenate([x, np.zeros(n)])
    v = z[n:]
    grad = problem.gradients
    every = int(sample_every)

    samples = [_sample(problem, 1.0, x, v, alpha, dt, Z)]
    count = 0
    for lo, hi, steps in _segments(t_end, dt, coarsen, dt_max):
        h = (hi - lo) / steps
        half = 0.5 * h

        def deriv(t, z):
            x, v = z[:n], z[n:]
            d = alpha / t
            out = np.empty(2 * n)
            out[:n] = v
            out[n:] = -d * v - sliding_selection(problem, x, grad(x), v, d, h)[0]
            return out

        for j in range(steps):
            t = lo + j * h
            k1 = deriv(t, z)
            k2 = deriv(t + half, z + half * k1)
            k3 = deriv(t + half, z + half * k2)
            k4 = deriv(t + h, z + h * k3)
            z = z + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            if not np.all(np.isfinite(z)):
                raise DivergenceError(f"non-finite state at t={t + h:.6g}", last_sample=samples[-1])
            count += 1
            if count % every == 0 or j == steps - 1:
                t_new = hi if j == steps - 1 else lo + (j + 1) * h
                samples.append(_sample(problem, t_new, z[:n], z[n:], alpha, h, Z))
    return samples


def continuous_diagnostics(problem, sample, alpha, refs):
    """Fill ``W``, ``theta_z_per_ref``, ``E_per_ref`` and ``merit`` of a sample.

    ``W_i = f_i(x) + |v|^2/2``; ``Theta_z = min_i (f_i(x) - f_i(z))``;
    with ``p = 2 alpha / 3``,
    ``E_z = t^p Theta_z + t^(p-2) |t v + p (x - z)|^2 / 2
    + alpha (3 - alpha)/9 t^(p-2) |x - z|^2``.
    """
    Z = refs.points if isinstance(refs, ReferenceSet) else np.atleast_2d(np.asarray(refs, dtype=float))
    t, x, v = sample.t, sample.x, sample.v
    p = 2.0 * alpha / 3.0
    sample.W = problem.values(x) + 0.5 * (v @ v)
    theta = problem.gaps(x, Z).min(axis=1)
    D = x[None, :] - Z
    M = t * v[None, :] + p * D
    tp2 = t ** (p - 2.0)
    sample.theta_z_per_ref = theta
    sample.E_per_ref = (
        t**p * theta
        + 0.5 * tp2 * np.einsum("ij,ij->i", M, M)
        + alpha * (3.0 - alpha) / 9.0 * tp2 * np.einsum("ij,ij->i", D, D)
    )
    sample.merit = float(theta.max())
    return sample


def attach_diagnostics(problem, samples, alpha, refs):
    for s in samples:
        continuous_diagnostics(problem, s, alpha, refs)
    return samples


def trajectory_columns(n, m, J):
    return (
        ["t"]
        + [f"x_{i}" for i in range(n)]
        + ["v_norm", "accel_norm"]
        + [f"W_{i + 1}" for i in range(m)]
        + ["merit"]
        + [f"E_ref{j}" for j in range(J)]
    )


def trajectory_table(samples):
    rows = []
    for s in samples:
        rows.append(
            np.concatenate(
                [
                    [s.t],
                    s.x,
                    [np.sqrt(s.v @ s.v), np.sqrt(s.acceleration @ s.acceleration)],
                    s.W,
                    [s.merit],
                    s.E_per_ref,
                ]
            )
        )
    return np.array(rows)


def continuous_slack(dt, value):
    return SLACK_FACTOR * dt * dt * (1.0 + np.abs(value))


def rate_constant(alpha, u0, R):
    """``u0 + 2 alpha (alpha + 3)/9 R^2``."""
    return u0 + 2.0 * alpha * (alpha + 3.0) / 9.0 * R * R


def tail_displacement(samples, T):
    """``sup ||x(t) - x(T)||`` over samples with ``0.9 T <= t <= T``."""
    ts = np.array([s.t for s in samples])
    end = np.flatnonzero(np.isclose(ts, T, rtol=1e-12, atol=0.0))
    if end.size == 0:
        raise InputError(f"no sample at t={T}")
    xT = samples[end[0]].x
    inside = [s.x for s in samples if 0.9 * T <= s.t <= T]
    return float(max(np.linalg.norm(x - xT) for x in inside))


def continuous_invariants(table, meta):
    """Recompute the trajectory invariants from a trajectory table.

    ``meta`` needs ``alpha``, ``dt``, ``dt_max`` and ``R_hat``. The slack
    between consecutive samples is ``10 dt^2 (1 + |value|)`` with ``dt`` the
    step in effect on that interval.
    """
    from .diagnostics import InvariantResult, _result

    alpha = meta["alpha"]
    t = table.col("t")
    W = table.block("W_")
    vn = table.col("v_norm")
    E = table.block("E_ref")
    merit = table.col("merit")
    dts = np.array([dt_at(tt, meta["dt"], True, meta.get("dt_max", DT_MAX)) for tt in t[:-1]])
    out = []
    if len(t) >= 2:
        ex = W[1:] - W[:-1]
        out.append(_result("energy_decay", ex, ex <= continuous_slack(dts[:, None], W[:-1])))
        f = W - 0.5 * vn[:, None] ** 2
        ex = f - f[0]
        sl = continuous_slack(np.concatenate([[dts[0]], dts])[:, None], f[0])
        out.append(_result("level_containment", ex, ex <= sl))
        if alpha <= 3.0:
            ex = E[1:] - E[:-1]
            out.append(_result("lyapunov_decay", ex, ex <= continuous_slack(dts[:, None], E[:-1])))
        else:
            out.append(InvariantResult("lyapunov_decay", "n/a", 0.0, "alpha > 3"))
    else:
        for name in ("energy_decay", "level_containment", "lyapunov_decay"):
            out.append(InvariantResult(name, "pass", 0.0))
    R = meta.get("R_hat")
    if R is None:
        out.append(InvariantResult("rate_bound", "n/a", 0.0, "no level radius"))
    else:
        C = rate_constant(alpha, merit[0], R)
        lhs = t ** (2.0 * alpha / 3.0) * merit
        dt_all = np.concatenate([[dts[0] if dts.size else meta["dt"]], dts])
        ex = lhs - C
        out.append(_result("rate_bound", ex, ex <= continuous_slack(dt_all, C), f"rhs={C:.6g}"))
    return out
