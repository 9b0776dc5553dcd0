"""Smooth convex multiobjective test problems.

Every problem is an :class:`ObjectiveBundle`: vectorised evaluators for the
objective vector and for the gradient matrix (one column per objective), a
global gradient Lipschitz bound, and optional helpers that the diagnostics use
(an analytic Pareto-set sampler, a level-set radius bound and a
cancellation-free evaluator of ``f_i(x) - f_i(z)``).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EvaluationError, InputError, UnsupportedProblemError
from .simplex import GradientHull

FD_STEP_FACTOR = np.finfo(float).eps ** (1.0 / 3.0)


@dataclass(frozen=True)
class ObjectiveBundle:
    """A multiobjective problem ``min_x (f_1(x), ..., f_m(x))``.

    Parameters
    ----------
    name : str
        Registry name, used in run metadata.
    n, m : int
        Decision dimension and number of objectives.
    value_fn : callable
        ``x -> (m,)`` array of objective values.
    gradient_fn : callable
        ``x -> (n, m)`` array whose column ``i`` is the gradient of ``f_i``.
    lipschitz_L : float
        Largest gradient Lipschitz constant over the objectives.
    pareto_sampler : callable, optional
        ``count -> (count, n)`` array of points on the known Pareto set.
    level_radius_hint : callable, optional
        ``x0 -> R`` with ``R >= sup{||x|| : F(x) <= F(x0)}``.
    gap_fn : callable, optional
        ``(x, Z) -> (J, m)`` array of ``f_i(x) - f_i(z_j)`` computed without
        subtracting two large values. Falls back to plain differences.
    curvature_fn : callable, optional
        ``(x, v) -> (m,)`` array of ``<v, H_i(x) v>`` with ``H_i`` the Hessian
        of ``f_i``. The inertial integrator falls back to differences of
        gradients.
    params : dict
        Constructor parameters, echoed into run metadata.
    """

    name: str
    n: int
    m: int
    value_fn: Callable
    gradient_fn: Callable
    lipschitz_L: float
    pareto_sampler: Optional[Callable] = None
    level_radius_hint: Optional[Callable] = None
    gap_fn: Optional[Callable] = None
    curvature_fn: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InputError(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        if not self.lipschitz_L > 0:
            raise InputError(f"lipschitz_L must be positive, got {self.lipschitz_L}")

    def values(self, x):
        return np.asarray(self.value_fn(x), dtype=float)

    def gradients(self, x):
        return np.asarray(self.gradient_fn(x), dtype=float)

    def gaps(self, x, Z):
        """``f_i(x) - f_i(z_j)`` for every row ``z_j`` of ``Z``, shape ``(J, m)``."""
        Z = np.atleast_2d(Z)
        if self.gap_fn is not None:
            return self.gap_fn(x, Z)
        fx = self.values(x)
        return fx[None, :] - np.array([self.values(z) for z in Z])


@dataclass(frozen=True)
class ReferenceSet:
    """Finite set of comparison points ``z`` for sigma, the merit surrogate and E.

    ``tail_index`` marks the row holding the run's final iterate, when present.
    """

    points: np.ndarray
    origin: str
    tail_index: Optional[int] = None

    ORIGINS = ("pareto_analytic", "trajectory_tail", "user_supplied")

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise InputError("reference set must be nonempty")
        if self.origin not in self.ORIGINS:
            raise InputError(f"unknown reference origin {self.origin!r}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def with_tail(self, x_tail):
        """Append a final iterate and remember its index."""
        x_tail = np.asarray(x_tail, dtype=float).reshape(1, -1)
        pts = np.vstack([self.points, x_tail])
        return ReferenceSet(pts, self.origin, tail_index=pts.shape[0] - 1)


def _as_point(problem, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (problem.n,):
        raise InputError(f"point has shape {x.shape}, expected ({problem.n},)")
    return x


def evaluate(problem, x):
    """Return ``(values, hull)`` at ``x``; the hull holds the ``(n, m)`` gradient columns."""
    x = _as_point(problem, x)
    return problem.values(x), GradientHull(problem.gradients(x), anchor=x)


def check_gradients(problem, x):
    """Largest relative error between ``gradient_fn`` and central differences.

    The step is ``eps**(1/3) * (1 + ||x||)``. Errors in column ``i`` are scaled
    by ``max(1, max_j |fd_ji|)``.
    """
    x = _as_point(problem, x)
    h = FD_STEP_FACTOR * (1.0 + np.linalg.norm(x))
    G = problem.gradients(x)
    fd = np.empty((problem.n, problem.m))
    for j in range(problem.n):
        e = np.zeros(problem.n)
        e[j] = h
        fp = problem.values(x + e)
        fm = problem.values(x - e)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise EvaluationError(f"non-finite objective value near x along coordinate {j}")
        fd[j] = (fp - fm) / (2.0 * h)
    scale = np.maximum(1.0, np.max(np.abs(fd), axis=0))
    return float(np.max(np.abs(G - fd) / scale[None, :]))


def make_jos1(n):
    """JOS1: ``f_1 = ||x||^2 / n`` and ``f_2 = ||x - 2||^2 / n``.

    The Pareto set is the segment ``{2 t 1 : t in [0, 1]}``.
    """
    n = int(n)
    if n < 1:
        raise InputError(f"JOS1 needs n >= 1, got {n}")
    two = 2.0 * np.ones(n)

    def value_fn(x):
        d = x - two
        return np.array([x @ x / n, d @ d / n])

    def gradient_fn(x):
        G = np.empty((n, 2))
        np.multiply(x, 2.0 / n, out=G[:, 0])
        np.multiply(x - two, 2.0 / n, out=G[:, 1])
        return G

    def gap_fn(x, Z):
        D = x[None, :] - Z
        S = x[None, :] + Z
        return np.column_stack([np.sum(D * S, axis=1) / n, np.sum(D * (S - 4.0), axis=1) / n])

    def pareto_sampler(count):
        t = np.linspace(0.0, 1.0, int(count))
        return 2.0 * t[:, None] * np.ones((1, n))

    def level_radius(x0):
        x0 = np.asarray(x0, dtype=float)
        # the level set lies in both balls {f_1 <= f_1(x0)} and {f_2 <= f_2(x0)}
        return float(min(np.linalg.norm(x0), np.linalg.norm(two) + np.linalg.norm(x0 - two)))

    return ObjectiveBundle(
        name="jos1",
        n=n,
        m=2,
        value_fn=value_fn,
        gradient_fn=gradient_fn,
        lipschitz_L=2.0 / n,
        pareto_sampler=pareto_sampler,
        level_radius_hint=level_radius,
        gap_fn=gap_fn,
        curvature_fn=lambda x, v: np.full(2, 2.0 * (v @ v) / n),
        params={"n": n},
    )


def quadratic_ensemble_data(n, m, seed):
    """Matrices ``A`` (m, n, n) and offsets ``b`` (m, n) of the seeded ensemble."""
    rng = np.random.default_rng(seed)
    A = np.empty((m, n, n))
    b = np.empty((m, n))
    for i in range(m):
        B = rng.standard_normal((n, n))
        A[i] = B @ B.T / n + 0.5 * np.eye(n)
        b[i] = 2.0 * rng.standard_normal(n)
    return A, b


def make_quadratic_ensemble(n, m, seed):
    """Seeded strictly convex quadratics ``f_i = 0.5 x'A_i x + b_i'x``.

    ``A_i = B B'/n + I/2`` with Gaussian ``B``, so every objective is
    0.5-strongly convex. The Pareto set consists of the weighted-sum
    minimisers ``-(sum l_i A_i)^{-1} sum l_i b_i`` over the simplex.
    """
    n, m = int(n), int(m)
    if n < 1 or m < 1:
        raise InputError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    A, b = quadratic_ensemble_data(n, m, seed)
    eig = np.linalg.eigvalsh(A)
    lam_min, lam_max = eig[:, 0], eig[:, -1]
    minimisers = np.array([-np.linalg.solve(A[i], b[i]) for i in range(m)])
    f_min = np.array([0.5 * b[i] @ minimisers[i] for i in range(m)])

    def value_fn(x):
        return 0.5 * np.einsum("j,ijk,k->i", x, A, x) + b @ x

    def gradient_fn(x):
        return (A @ x + b).T

    def gap_fn(x, Z):
        D = x[None, :] - Z
        S = x[None, :] + Z
        return 0.5 * np.einsum("jk,ikl,jl->ji", D, A, S) + D @ b.T

    def weighted_minimiser(lam):
        return -np.linalg.solve(np.tensordot(lam, A, axes=1), lam @ b)

    def pareto_sampler(count):
        count = int(count)
        if m == 1:
            return np.repeat(minimisers, count, axis=0)
        if m == 2:
            l1 = np.linspace(0.0, 1.0, count)
            lams = np.column_stack([l1, 1.0 - l1])
        else:
            rng_ref = np.random.default_rng([seed, 2])
            lams = np.vstack([np.eye(m), rng_ref.dirichlet(np.ones(m), size=max(count - m, 0))])[:count]
        return np.array([weighted_minimiser(lam) for lam in lams])

    def level_radius(x0):
        x0 = np.asarray(x0, dtype=float)
        excess = np.maximum(value_fn(x0) - f_min, 0.0)
        radii = np.linalg.norm(minimisers, axis=1) + np.sqrt(2.0 * excess / lam_min)
        return float(radii.min())

    return ObjectiveBundle(
        name="quadratic",
        n=n,
        m=m,
        value_fn=value_fn,
        gradient_fn=gradient_fn,
        lipschitz_L=float(lam_max.max()),
        pareto_sampler=pareto_sampler,
        level_radius_hint=level_radius,
        gap_fn=gap_fn,
        curvature_fn=lambda x, v: np.einsum("j,ijk,k->i", v, A, v),
        params={"n": n, "m": m, "seed": int(seed)},
    )


def make_problem(name, n, m=None, seed=0):
    """Build a registered problem by name (``jos1`` or ``quadratic``)."""
    if name == "jos1":
        if m not in (None, 2):
            raise InputError("jos1 has exactly two objectives")
        return make_jos1(n)
    if name == "quadratic":
        return make_quadratic_ensemble(n, 2 if m is None else m, seed)
    raise UnsupportedProblemError(f"unknown problem {name!r}")


def start_point(problem, seed=0, scale=5.0):
    """Deterministic starting point, uniform on ``[-scale, scale]^n``."""
    rng = np.random.default_rng([int(seed), 1])
    return rng.uniform(-scale, scale, problem.n)


def pareto_reference(problem, count, tail=None):
    """Reference set for the merit surrogate.

    Uses the analytic Pareto sampler when the problem has one. Otherwise falls
    back to the last iterate of a completed run, passed as ``tail`` (a point or
    an array of iterates).
    """
    count = int(count)
    if count < 1:
        raise InputError("reference count must be >= 1")
    if problem.pareto_sampler is not None:
        return ReferenceSet(problem.pareto_sampler(count), "pareto_analytic")
    if tail is not None:
        last = np.atleast_2d(np.asarray(tail, dtype=float))[-1]
        return ReferenceSet(last[None, :], "trajectory_tail", tail_index=0)
    raise UnsupportedProblemError(f"{problem.name}: no Pareto sampler and no run tail supplied")
