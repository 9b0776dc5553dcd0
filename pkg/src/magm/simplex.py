"""Simplex-constrained quadratic subproblems.

Everything here reduces to one problem: find ``theta`` in the unit simplex
minimising ``||G theta - w||^2`` for a gradient matrix ``G`` of shape
``(n, m)``. The minimiser of the convex hull distance is unique in
``G theta`` even when ``theta`` is not.

For ``m <= 8`` the solver enumerates every support (all ``2^m - 1`` nonempty
index sets, in increasing bitmask order), solves the equality-constrained KKT
system on each one in a single batched pseudo-inverse, and keeps the best
feasible candidate. Larger ``m`` use projected gradient with a fixed step.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

from .errors import InputError, SubproblemError, UnsupportedProblemError

DEFAULT_TOL = 1e-10
ENUMERATION_MAX_M = 8
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class GradientHull:
    """Gradients ``grad f_i(anchor)`` stored as the columns of an ``(n, m)`` array."""

    columns: np.ndarray
    anchor: Optional[np.ndarray] = None

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=float)
        if cols.ndim == 1:
            cols = cols[:, None]
        if cols.ndim != 2 or cols.shape[1] < 1:
            raise InputError(f"hull columns must be an (n, m) array, got shape {cols.shape}")
        object.__setattr__(self, "columns", cols)

    @property
    def n(self):
        return self.columns.shape[0]

    @property
    def m(self):
        return self.columns.shape[1]


class SubproblemSolution(NamedTuple):
    theta: np.ndarray
    direction: np.ndarray
    residual: float
    objective: float
    degenerate: bool = False


def _columns(hull):
    if isinstance(hull, GradientHull):
        return hull.columns
    if isinstance(hull, np.ndarray) and hull.ndim == 2 and hull.dtype == float and hull.shape[1] >= 1:
        return hull
    return GradientHull(hull).columns


def _vector(G, v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.shape != (G.shape[0],):
        raise InputError(f"{name} has shape {v.shape}, expected ({G.shape[0]},)")
    return v


def project_simplex(w):
    """Euclidean projection of ``w`` onto the unit simplex (sort and threshold)."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InputError("project_simplex expects a nonempty 1-d array")
    if not np.all(np.isfinite(w)):
        raise InputError("project_simplex: non-finite input")
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, w.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    theta = np.maximum(w - tau, 0.0)
    return theta / theta.sum()


@lru_cache(maxsize=None)
def _support_template(m):
    """Masks and constant KKT blocks for every support, in bitmask order."""
    codes = np.arange(1, 2**m)
    masks = ((codes[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    S = masks.shape[0]
    inside = (masks[:, :, None] & masks[:, None, :]).astype(float)
    base = np.zeros((S, m + 1, m + 1))
    # theta_i = 0 off the support, sum(theta) = 1 on it
    base[:, :m, :m] = np.where(masks, 0.0, 1.0)[:, :, None] * np.eye(m)[None, :, :]
    base[:, :m, m] = masks
    base[:, m, :m] = masks
    return masks, inside, base


def _kkt_residual(G, theta, w):
    """``max_{theta_i > 0} g_i - min_i g_i`` for ``g = 2 G'(G theta - w)``."""
    g = 2.0 * (G.T @ (G @ theta - w))
    return float(g[theta > 0].max() - g.min())


def _enumerate_pair(G, w):
    # supports {1}, {2}, {1, 2} in bitmask order
    g1, g2 = G[:, 0], G[:, 1]
    d = g1 - g2
    dd = d @ d
    r1, r2 = g1 - w, g2 - w
    cands = [(r1 @ r1, 1.0), (r2 @ r2, 0.0)]
    if dd > 0:
        t = -(r2 @ d) / dd
        if 0.0 < t < 1.0:
            r = r2 + t * d
            cands.append((r @ r, t))
    best = min(c[0] for c in cands)
    slack = 4 * _EPS * (np.sqrt(w @ w) + np.sqrt(max(g1 @ g1, g2 @ g2))) ** 2
    for obj, t in cands:
        if obj <= best + slack:
            return np.array([t, 1.0 - t])


def _enumerate(G, w):
    m = G.shape[1]
    if m == 2:
        return _enumerate_pair(G, w)
    H = G.T @ G
    c = G.T @ w
    scale = np.max(np.diag(H))
    masks, inside, base = _support_template(m)
    K = base.copy()
    K[:, :m, :m] += inside * (H / scale)
    rhs = np.empty((masks.shape[0], m + 1, 1))
    rhs[:, :m, 0] = masks * (c / scale)
    rhs[:, m, 0] = 1.0
    try:
        sol = np.linalg.solve(K, rhs)[:, :m, 0]
    except np.linalg.LinAlgError:
        sol = (np.linalg.pinv(K) @ rhs)[:, :m, 0]
    theta = sol * masks

    ok = np.all(np.isfinite(theta), axis=1) & (theta.min(axis=1) >= -1e-9)
    theta = np.maximum(theta, 0.0)
    total = theta.sum(axis=1)
    ok &= total > 0.5
    theta[ok] /= total[ok, None]
    resid = theta @ G.T - w
    obj = np.einsum("si,si->s", resid, resid)
    obj[~ok] = np.inf
    best = obj.min()
    if not np.isfinite(best):
        return np.full(m, 1.0 / m)
    # near-ties go to the first support in bitmask order
    slack = 4 * _EPS * (np.sqrt(w @ w) + np.sqrt(np.max(np.diag(H)))) ** 2
    pick = int(np.argmax(obj <= best + slack))
    return theta[pick]


def _projected_gradient(G, w, theta, tol, max_iter):
    step = 1.0 / (2.0 * np.sum(G * G))
    best_theta, best_res = theta, _kkt_residual(G, theta, w)
    for it in range(max_iter):
        theta = project_simplex(theta - step * 2.0 * G.T @ (G @ theta - w))
        if it % 25 == 0 or it == max_iter - 1:
            res = _kkt_residual(G, theta, w)
            if res < best_res:
                best_theta, best_res = theta, res
            if res <= tol:
                break
    return best_theta, best_res


def _solve(G, w, tol):
    """Minimise ``||G theta - w||^2`` over the simplex.

    Returns ``(theta, residual, degenerate)`` where ``residual`` is the KKT
    residual of this unscaled objective.
    """
    m = G.shape[1]
    if m == 1:
        return np.ones(1), 0.0, False
    if not G.any():
        return np.full(m, 1.0 / m), 0.0, True
    gnorm = np.sqrt(np.sum(G * G))
    threshold = tol * max(1.0, 2.0 * gnorm * (gnorm + np.sqrt(w @ w)))
    # enumerate on a unit-scale copy so that G'G neither underflows nor overflows
    gamma = np.abs(G).max()
    with np.errstate(over="ignore"):
        w_unit = w / gamma
    if m <= ENUMERATION_MAX_M and np.all(np.isfinite(w_unit)):
        theta = _enumerate(G / gamma, w_unit)
        res = _kkt_residual(G, theta, w)
        if res <= threshold:
            return theta, res, False
    else:
        theta = np.full(m, 1.0 / m)
    theta, res = _projected_gradient(G, w, theta, threshold, 10 * m * 1000)
    if res > threshold:
        raise SubproblemError(
            f"simplex subproblem: KKT residual {res:.3e} above {threshold:.3e}", best_residual=res
        )
    return theta, res, False


def solve_subproblem(hull, v, s, tol=DEFAULT_TOL):
    """Solve ``min_{theta in simplex} ||s G theta - v||^2``.

    Parameters
    ----------
    hull : GradientHull or array_like
        Gradient columns, shape ``(n, m)``.
    v : array_like
        Target vector (``y_k - x_k`` in the accelerated step).
    s : float
        Positive step size.
    tol : float
        KKT tolerance, relative to the gradient magnitude when that exceeds 1.

    Returns
    -------
    SubproblemSolution
        ``theta``, ``direction = G theta``, the KKT residual of the scaled
        objective, the objective value, and whether all columns were zero.
    """
    G = _columns(hull)
    v = _vector(G, v, "v")
    if not s > 0:
        raise InputError(f"s must be positive, got {s}")
    theta, res, degenerate = _solve(G, v / s, tol)
    direction = G @ theta
    r = s * direction - v
    return SubproblemSolution(theta, direction, s * s * res, float(r @ r), degenerate)


def min_norm_element(hull, tol=DEFAULT_TOL):
    """Projection of the origin onto ``conv{columns}``."""
    G = _columns(hull)
    theta, _, _ = _solve(G, np.zeros(G.shape[0]), tol)
    return G @ theta


def project_hull(hull, w, tol=DEFAULT_TOL):
    """Projection of ``w`` onto ``conv{columns}``."""
    G = _columns(hull)
    w = _vector(G, w, "w")
    theta, _, _ = _solve(G, w, tol)
    return G @ theta


@lru_cache(maxsize=8)
def _lattice(m, grid):
    rows = np.zeros((1, 0), dtype=np.int64)
    left = np.array([grid], dtype=np.int64)
    for _ in range(m - 1):
        counts = left + 1
        owner = np.repeat(np.arange(left.size), counts)
        starts = np.cumsum(counts) - counts
        k = np.arange(counts.sum()) - np.repeat(starts, counts)
        rows = np.column_stack([rows[owner], k])
        left = left[owner] - k
    out = np.column_stack([rows, left])
    out.setflags(write=False)
    return out


def simplex_grid(m, grid):
    """All points of the simplex with coordinates in ``{0, 1/grid, ..., 1}``."""
    return _lattice(int(m), int(grid)) / float(grid)


def brute_force_subproblem(hull, v, s, grid):
    """Grid-search oracle for :func:`solve_subproblem` (``m <= 4``)."""
    G = _columns(hull)
    v = _vector(G, v, "v")
    m = G.shape[1]
    if m > 4:
        raise UnsupportedProblemError(f"brute force needs m <= 4, got m={m}")
    if grid < 10:
        raise InputError(f"grid must be >= 10, got {grid}")
    if m == 1:
        return np.ones(1)
    thetas = simplex_grid(m, grid)
    H = s * s * (G.T @ G)
    c = s * (G.T @ v)
    obj = np.sum((thetas @ H) * thetas, axis=1) - 2.0 * thetas @ c + v @ v
    return thetas[int(np.argmin(obj))].copy()


def subproblem_objective(hull, v, s, theta):
    """``||s G theta - v||^2``."""
    G = _columns(hull)
    r = s * (G @ np.asarray(theta, dtype=float)) - np.asarray(v, dtype=float)
    return float(r @ r)
