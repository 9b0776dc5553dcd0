"""Accelerated multiobjective gradient method with a generalised momentum schedule.

Each iteration advances ``t_{k+1} = sqrt(t_k^2 - a t_k + b) + 1/2``, forms the
extrapolated point ``y_k = x_k + (t_k - 1)/t_{k+1} (x_k - x_{k-1})`` and moves
to ``x_{k+1} = y_k - s G(y_k) theta``, where ``theta`` minimises
``||s G(y_k) theta - (y_k - x_k)||^2`` over the simplex. With ``a = b = 0``
this is the classical ``(k - 1)/(k + 2)`` momentum.

:func:`run_msd` is the steepest-descent baseline
``x_{k+1} = x_k - s proj_{C(x_k)}(0)``.
"""

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import InputError, SubproblemError
from .simplex import DEFAULT_TOL, min_norm_element, solve_subproblem

TERMINATIONS = ("eps_reached", "k_max_reached")


@dataclass(frozen=True)
class StepSchedule:
    """Momentum parameters ``(a, b)`` with the current ``t_k`` and counter ``k``."""

    a: float
    b: float
    t: float = 1.0
    k: int = 1

    def __post_init__(self):
        check_ab(self.a, self.b)


def check_ab(a, b):
    """Raise :class:`InputError` unless ``0 <= a < 1`` and ``a^2/4 <= b <= 1/4``."""
    if not (np.isfinite(a) and 0.0 <= a < 1.0):
        raise InputError(f"a must lie in [0, 1), got {a}")
    if not (np.isfinite(b) and a * a / 4.0 <= b <= 0.25):
        raise InputError(f"b must lie in [a²/4, 1/4], got b={b} with a={a}")


def next_t(a, b, t):
    """One step of the momentum recurrence."""
    rad = t * t - a * t + b
    if rad < 0:
        raise RuntimeError(f"negative radicand {rad} in momentum recurrence (t={t}, a={a}, b={b})")
    return np.sqrt(rad) + 0.5


def advance_schedule(schedule):
    return replace(schedule, t=float(next_t(schedule.a, schedule.b, schedule.t)), k=schedule.k + 1)


def schedule_sequence(a, b, k_max):
    """``t_1, ..., t_{k_max}`` as an array (index ``k - 1`` holds ``t_k``)."""
    check_ab(a, b)
    out = [1.0]
    t = 1.0
    for _ in range(int(k_max) - 1):
        t = math.sqrt(t * t - a * t + b) + 0.5
        out.append(t)
    return np.array(out)


@dataclass(frozen=True)
class SolverState:
    """Iterate pair ``(x_{k-1}, x_k)`` with the schedule at ``t_k``.

    ``y_cur`` and ``theta_last`` hold the extrapolated point and subproblem
    weights of the step that produced ``x_cur``.
    """

    k: int
    x_prev: np.ndarray
    x_cur: np.ndarray
    schedule: Optional[StepSchedule]
    y_cur: Optional[np.ndarray] = None
    theta_last: Optional[np.ndarray] = None

    @property
    def t(self):
        return 1.0 if self.schedule is None else self.schedule.t


def initial_state(x0, a=0.0, b=0.25):
    """State at ``k = 1`` with ``x_0 = x_1 = x0`` and ``t_1 = 1``."""
    x0 = np.array(x0, dtype=float).ravel()
    return SolverState(k=1, x_prev=x0, x_cur=x0.copy(), schedule=StepSchedule(a, b))


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the accelerated method.

    ``s = None`` means ``1/L`` for the problem at hand.
    """

    a: float = 0.0
    b: float = 0.25
    s: Optional[float] = None
    eps: float = 1e-10
    k_max: int = 100_000
    subproblem_tol: float = DEFAULT_TOL

    def __post_init__(self):
        check_ab(self.a, self.b)
        if self.s is not None and not (np.isfinite(self.s) and self.s > 0):
            raise InputError(f"s must be positive, got {self.s}")
        # eps = 0 disables the stopping test
        if not (np.isfinite(self.eps) and self.eps >= 0):
            raise InputError(f"eps must be nonnegative, got {self.eps}")
        if int(self.k_max) < 1:
            raise InputError(f"k_max must be >= 1, got {self.k_max}")
        if not self.subproblem_tol > 0:
            raise InputError(f"subproblem_tol must be positive, got {self.subproblem_tol}")

    def step_size(self, problem):
        """Resolved step size, checked against ``1/L``."""
        return resolve_step(problem, self.s)


def resolve_step(problem, s=None):
    s_max = 1.0 / problem.lipschitz_L
    if s is None:
        return s_max
    if not s > 0 or s > s_max * (1.0 + 1e-12):
        raise InputError(f"s must lie in (0, 1/L] = (0, {s_max:.17g}], got {s}")
    return float(s)


class StepInfo(NamedTuple):
    step_norm: float
    theta: np.ndarray
    residual: float
    y: np.ndarray


@dataclass
class RunResult:
    final_state: SolverState
    termination: str
    iterations: int
    iterates: Optional[np.ndarray] = None
    diagnostics_path: Optional[str] = None


def momentum_point(state, t_next):
    """``y_k = x_k + (t_k - 1)/t_{k+1} (x_k - x_{k-1})``; ``t_{k+1}`` must come first."""
    t = state.t
    if t == 1.0:
        return state.x_cur.copy()
    return state.x_cur + ((t - 1.0) / t_next) * (state.x_cur - state.x_prev)


def step(state, config, problem, s=None):
    """One accelerated iteration. Returns ``(new_state, StepInfo)``."""
    s = config.step_size(problem) if s is None else s
    sched = advance_schedule(state.schedule)
    y = momentum_point(state, sched.t)
    G = problem.gradients(y)
    try:
        sol = solve_subproblem(G, y - state.x_cur, s, config.subproblem_tol)
    except SubproblemError as exc:
        raise SubproblemError(f"iteration k={state.k}: {exc}", exc.best_residual) from exc
    x_next = y - s * sol.direction
    d = x_next - y
    info = StepInfo(float(np.sqrt(d @ d)), sol.theta, sol.residual, y)
    new = SolverState(state.k + 1, state.x_cur, x_next, sched, y, sol.theta)
    return new, info


def _check_x0(problem, x0):
    x0 = np.array(x0, dtype=float).ravel()
    if x0.shape != (problem.n,):
        raise InputError(f"x0 has shape {x0.shape}, expected ({problem.n},)")
    if not np.all(np.isfinite(x0)):
        raise InputError("x0 must be finite")
    return x0


def _loop(problem, state, advance, eps, k_max, sink, store_iterates):
    stored = [state.x_cur.copy()] if store_iterates else None
    termination = "k_max_reached"
    done = 0
    try:
        while done < k_max:
            if sink is not None:
                sink.record(state)
            new, info = advance(state)
            if sink is not None:
                sink.after_step(state, info, new)
            state = new
            done += 1
            if stored is not None:
                stored.append(state.x_cur.copy())
            if info.step_norm < eps:
                termination = "eps_reached"
                break
    finally:
        if sink is not None:
            sink.close(state)
    iterates = np.array(stored) if stored is not None else None
    return RunResult(state, termination, done, iterates, getattr(sink, "path", None))


def run(problem, config, x0, sink=None, store_iterates=False):
    """Run the accelerated method from ``x_0 = x_1 = x0``.

    Parameters
    ----------
    problem : ObjectiveBundle
    config : SolverConfig
    x0 : array_like
    sink : object, optional
        Receives ``record(state)`` before every iteration, ``after_step(old,
        info, new)`` after it and ``close(final_state)`` at the end, also when
        an error aborts the run.
    store_iterates : bool
        Keep ``x_1, ..., x_{K+1}`` in ``RunResult.iterates``.

    Returns
    -------
    RunResult
        ``iterations`` counts completed steps; ``termination`` is
        ``"eps_reached"`` when the last step had ``||x_{k+1} - y_k|| < eps``.
    """
    x0 = _check_x0(problem, x0)
    s = config.step_size(problem)
    state = initial_state(x0, config.a, config.b)
    if sink is not None:
        sink.open(problem, s, config.a, config.b, x0)
    return _loop(
        problem,
        state,
        lambda st: step(st, config, problem, s),
        config.eps,
        int(config.k_max),
        sink,
        store_iterates,
    )


def msd_step(state, problem, s, tol=DEFAULT_TOL):
    p = min_norm_element(problem.gradients(state.x_cur), tol)
    x_next = state.x_cur - s * p
    info = StepInfo(float(s * np.sqrt(p @ p)), None, 0.0, state.x_cur)
    return SolverState(state.k + 1, state.x_cur, x_next, None), info


def run_msd(problem, s, eps, k_max, x0, sink=None, store_iterates=False, tol=DEFAULT_TOL):
    """Steepest-descent baseline ``x_{k+1} = x_k - s proj_{C(x_k)}(0)``."""
    x0 = _check_x0(problem, x0)
    s = resolve_step(problem, s)
    if int(k_max) < 1:
        raise InputError(f"k_max must be >= 1, got {k_max}")
    state = SolverState(1, x0, x0.copy(), None)
    if sink is not None:
        sink.open(problem, s, None, None, x0)
    return _loop(problem, state, lambda st: msd_step(st, problem, s, tol), eps, int(k_max), sink, store_iterates)


def schedule_checks(a, b, t):
    """Worst relative violation of each schedule inequality over ``t_1..t_K``.

    Returns a dict keyed ``"i"`` to ``"v"``; a value ``<= 0`` means the
    inequality holds everywhere, a positive value is the largest excess
    divided by ``max(1, |rhs|)``.

    - i: ``t_{k+1} >= t_k + (1-a)/2`` and ``t_k >= (1-a)k/2 + (1+a)/2``
    - ii: ``t_{k+1} <= t_k + c/2`` and ``t_k <= c(k-1)/2 + 1 <= k`` with
      ``c = 1 - a + sqrt(4b - a^2)``
    - iii: ``t_k^2 - t_{k+1}^2 + t_{k+1} = a t_k - b + 1/4``, error relative to
      ``1 + t_{k+1}^2``
    - iv: ``0 <= (t_k - 1)/t_{k+1} <= (k - 1)/(k + 1/2)``
    - v: ``1 - ((t_k - 1)/t_{k+1})^2 >= 1/t_k``
    """
    t = np.asarray(t, dtype=float)
    k = np.arange(1, t.size + 1, dtype=float)
    tk, tn, kk = t[:-1], t[1:], k[:-1]
    c = 1.0 - a + np.sqrt(max(4.0 * b - a * a, 0.0))

    def excess(lhs, rhs):
        if np.size(lhs) == 0:
            return -np.inf
        return float(np.max((lhs - rhs) / np.maximum(1.0, np.abs(rhs))))

    coef = (tk - 1.0) / tn
    return {
        "i": max(excess(tk + (1.0 - a) / 2.0, tn), excess((1.0 - a) * k / 2.0 + (1.0 + a) / 2.0, t)),
        "ii": max(
            excess(tn, tk + c / 2.0),
            excess(t, c * (k - 1.0) / 2.0 + 1.0),
            excess(c * (k - 1.0) / 2.0 + 1.0, k),
        ),
        "iii": float(np.max(np.abs(tk * tk - tn * tn + tn - (a * tk - b + 0.25)) / (1.0 + tn * tn)))
        if tk.size
        else -np.inf,
        "iv": max(excess(-coef, 0.0), excess(coef, (kk - 1.0) / (kk + 0.5))),
        "v": excess(1.0 / tk, 1.0 - coef * coef),
    }
