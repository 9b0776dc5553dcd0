"""Per-iteration diagnostics for the accelerated method and the descent baseline.

For a reference point ``z`` the gap ``sigma_k(z) = min_i (f_i(x_k) - f_i(z))``
feeds the merit surrogate (its maximum over a finite reference set, a lower
bound of the exact merit function) and the discrete Lyapunov function
``E_k(z) = t_k^2 sigma_k(z) + ||eta_k - z||^2 / (2s)`` with
``eta_k = x_k + (t_k - 1)(x_k - x_{k-1})``.

:class:`DiagnosticsRecorder` is a solver sink that turns every iteration into
one CSV row. :func:`discrete_invariants` recomputes the convergence
inequalities from such a table.
"""

import csv
import io
import json
import os
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import FormatError, InputError, InsufficientDataError
from .problems import ReferenceSet
from .simplex import DEFAULT_TOL, min_norm_element
from .solver import schedule_checks

CLIP = 1e-300
MIN_FIT_POINTS = 10
LYAPUNOV_SLACK = 1e-8
MONOTONE_SLACK = 1e-9
SIGMA_STEP_SLACK = 1e-9
CLUSTER_SLACK = 1e-8
MERIT_FLOOR = -1e-12
SUMMABILITY_MARGIN = 0.01


def _ref_points(refs):
    if isinstance(refs, ReferenceSet):
        return refs.points
    return np.atleast_2d(np.asarray(refs, dtype=float))


def sigma_all(problem, x, Z):
    """``sigma(x, z_j)`` for every row of ``Z``."""
    return problem.gaps(np.asarray(x, dtype=float), _ref_points(Z)).min(axis=1)


def sigma(problem, x, z):
    """``min_i (f_i(x) - f_i(z))``."""
    return float(sigma_all(problem, x, np.asarray(z, dtype=float).reshape(1, -1))[0])


def merit_surrogate(problem, x, refs):
    """``max_{z in Z} sigma(x, z)``, a lower bound of the merit function at ``x``."""
    return float(sigma_all(problem, x, refs).max())


def energy_W(problem, x, x_prev, s):
    """``f_i(x) + ||x - x_prev||^2 / (2s)`` for each objective."""
    if not s > 0:
        raise InputError(f"s must be positive, got {s}")
    d = np.asarray(x, dtype=float) - np.asarray(x_prev, dtype=float)
    return problem.values(np.asarray(x, dtype=float)) + (d @ d) / (2.0 * s)


def eta(state):
    return state.x_cur + (state.t - 1.0) * (state.x_cur - state.x_prev)


def lyapunov_E(problem, state, s, z):
    """``t_k^2 sigma_k(z) + ||eta_k - z||^2 / (2s)``."""
    z = np.asarray(z, dtype=float)
    d = eta(state) - z
    return state.t**2 * sigma(problem, state.x_cur, z) + (d @ d) / (2.0 * s)


def zeta_value(a, b, t):
    return a * t - b + 0.25


def zeta(schedule):
    """``a t_k - b + 1/4``."""
    return zeta_value(schedule.a, schedule.b, schedule.t)


def q_const(a, b):
    """``(1/4 - b)^2 / (2(1 - a))``."""
    return (0.25 - b) ** 2 / (2.0 * (1.0 - a))


def criticality_residual(problem, x, tol=DEFAULT_TOL):
    """Norm of the min-norm element of the gradient hull at ``x``."""
    p = min_norm_element(problem.gradients(np.asarray(x, dtype=float)), tol)
    return float(np.sqrt(p @ p))


class RateFit(NamedTuple):
    slope: float
    intercept: float
    used: int
    excluded: int


def rate_fit(series, window=None):
    """Least-squares slope of ``log(value)`` against ``log(k)``.

    Parameters
    ----------
    series : array_like
        Pairs ``(k, value)``, shape ``(N, 2)``.
    window : tuple, optional
        Inclusive ``(k_lo, k_hi)``. Defaults to the whole series.

    Returns
    -------
    RateFit
        Values at or below ``1e-300`` (and non-finite ones) are left out and
        counted in ``excluded``.

    Raises
    ------
    InsufficientDataError
        Fewer than 10 usable points in the window.
    """
    arr = np.asarray(series, dtype=float).reshape(-1, 2)
    k, val = arr[:, 0], arr[:, 1]
    if window is not None:
        inside = (k >= window[0]) & (k <= window[1])
        k, val = k[inside], val[inside]
    good = np.isfinite(val) & (val > CLIP) & (k > 0)
    if good.sum() < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f"rate fit needs {MIN_FIT_POINTS} positive values, found {int(good.sum())} "
            f"({int((~good).sum())} excluded) in window {window}"
        )
    slope, intercept = np.polyfit(np.log(k[good]), np.log(val[good]), 1)
    return RateFit(float(slope), float(intercept), int(good.sum()), int((~good).sum()))


def summability_bound(a, b, s, u0, R):
    """Bound on ``sum_p (a p - b + 1/4) ||x_p - x_{p-1}||^2``.

    ``(s u0 + R^2)`` times ``4/a`` when ``a > 0`` plus ``(1/4 - b)/Q(a, b)``
    when ``b < 1/4``. Zero for ``a = 0, b = 1/4``, where every summand vanishes.
    """
    base = s * u0 + R * R
    total = 0.0
    if a > 0:
        total += 4.0 / a * base
    if b < 0.25:
        total += (0.25 - b) / q_const(a, b) * base
    return total


class SummabilityResult(NamedTuple):
    partial_sums: np.ndarray
    bound: Optional[float]
    violated: bool
    tail_increment: float


def summability_check(partial_sums, a, b, s, u0, R=None, k=None):
    """Compare running partial sums with :func:`summability_bound`.

    ``tail_increment`` is the growth over the last decade of ``k``. Without a
    radius the bound is skipped with a warning.
    """
    ps = np.asarray(partial_sums, dtype=float)
    k = np.arange(1, ps.size + 1) if k is None else np.asarray(k)
    lo = np.searchsorted(k, k[-1] / 10.0) if ps.size else 0
    tail = float(ps[-1] - ps[min(lo, ps.size - 1)]) if ps.size else 0.0
    if R is None:
        warnings.warn("no level radius available; summability bound not checked", stacklevel=2)
        return SummabilityResult(ps, None, False, tail)
    bound = summability_bound(a, b, s, u0, R)
    violated = bool(ps.size and ps.max() > bound * (1.0 + SUMMABILITY_MARGIN) + 1e-300)
    return SummabilityResult(ps, bound, violated, tail)


def diagnostics_columns(m, J):
    return (
        ["k", "t_k", "step_norm_sq", "zeta", "merit", "crit_residual", "sum_partial"]
        + [f"f_{i + 1}" for i in range(m)]
        + [f"W_{i + 1}" for i in range(m)]
        + [f"sigma_ref{j}" for j in range(J)]
        + [f"E_ref{j}" for j in range(J)]
    )


@dataclass
class DiagnosticsRow:
    k: int
    t_k: float
    f_values: np.ndarray
    step_norm_sq: float
    W: np.ndarray
    sigma_per_ref: np.ndarray
    E_per_ref: np.ndarray
    zeta: float
    merit_surrogate: float
    criticality_residual: float
    summability_partial: float

    def as_vector(self):
        head = [
            self.k,
            self.t_k,
            self.step_norm_sq,
            self.zeta,
            self.merit_surrogate,
            self.criticality_residual,
            self.summability_partial,
        ]
        return np.concatenate([head, self.f_values, self.W, self.sigma_per_ref, self.E_per_ref])


class DiagnosticsTable:
    """Column-addressable view of a diagnostics array."""

    def __init__(self, columns, data):
        self.columns = list(columns)
        self.data = np.asarray(data, dtype=float).reshape(-1, len(self.columns))
        self._index = {c: i for i, c in enumerate(self.columns)}

    def __len__(self):
        return self.data.shape[0]

    def col(self, name):
        if name not in self._index:
            raise FormatError(f"diagnostics table has no column {name!r}")
        return self.data[:, self._index[name]]

    def block(self, prefix):
        idx = [i for c, i in self._index.items() if c.startswith(prefix) and c[len(prefix) :].isdigit()]
        return self.data[:, idx]

    @property
    def m(self):
        return sum(1 for c in self.columns if c.startswith("f_"))

    @property
    def J(self):
        return sum(1 for c in self.columns if c.startswith("sigma_ref"))


def format_rows(data):
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(data), fmt="%.17g", delimiter=",")
    return buf.getvalue()


def write_csv(path, columns, data):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        if len(data):
            fh.write(format_rows(data))


def read_csv(path, required=("k",)):
    """Read a diagnostics or trajectory CSV into a :class:`DiagnosticsTable`."""
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
            if not header:
                raise FormatError(f"{path}: missing header row")
            rows = [line for line in fh if line.strip()]
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    header = [h.strip() for h in header]
    for name in required:
        if name not in header:
            raise FormatError(f"{path}: missing column {name!r}")
    data = np.empty((len(rows), len(header)))
    for r, line in enumerate(rows):
        fields = line.rstrip("\n").split(",")
        if len(fields) != len(header):
            raise FormatError(f"{path}: row {r + 1} has {len(fields)} fields, header has {len(header)}")
        for c, text in enumerate(fields):
            try:
                data[r, c] = float(text)
            except ValueError:
                raise FormatError(f"{path}: column {header[c]!r}, row {r + 1}: cannot parse {text!r}") from None
    return DiagnosticsTable(header, data)


class DiagnosticsRecorder:
    """Solver sink producing one :class:`DiagnosticsRow` per iteration.

    Parameters
    ----------
    refs : ReferenceSet
        Comparison points for sigma, the merit surrogate and E.
    path : str, optional
        CSV destination, written on close.
    crit_tol : float
        Subproblem tolerance for the criticality residual.

    The recorder also checks the one-step sigma inequality
    ``sigma_{k+1}(z) <= -<x_{k+1} - y_k, y_k - z>/s - ||x_{k+1} - y_k||^2/(2s)``
    in-run, since ``y_k`` is not stored in the table.
    """

    def __init__(self, refs, path=None, crit_tol=DEFAULT_TOL):
        self.refs = refs
        self.Z = _ref_points(refs)
        self.path = path
        self.crit_tol = crit_tol
        self.rows = []
        self.sigma_step_worst = 0.0
        self.sigma_step_checked = 0
        self._pending = None
        self._sum = 0.0

    def open(self, problem, s, a, b, x0):
        if self.Z.shape[1] != problem.n:
            raise InputError(f"reference points have dimension {self.Z.shape[1]}, problem has n={problem.n}")
        self.problem, self.s, self.a, self.b = problem, s, a, b
        self.columns = diagnostics_columns(problem.m, self.Z.shape[0])

    def _sigma(self, x):
        return self.problem.gaps(x, self.Z).min(axis=1)

    def record(self, state):
        p, s, x = self.problem, self.s, state.x_cur
        d = x - state.x_prev
        step_sq = float(d @ d)
        fx = p.values(x)
        sig = self._sigma(x)
        if self._pending is not None:
            self._check_sigma(sig)
        accelerated = self.a is not None
        t = state.t
        if accelerated:
            zt = zeta_value(self.a, self.b, t)
            self._sum += (self.a * state.k - self.b + 0.25) * step_sq
            e = x + (t - 1.0) * d - self.Z
            E = t * t * sig + np.einsum("ij,ij->i", e, e) / (2.0 * s)
            summ = self._sum
        else:
            zt, summ = np.nan, np.nan
            E = np.full(sig.shape, np.nan)
        row = DiagnosticsRow(
            k=state.k,
            t_k=t if accelerated else np.nan,
            f_values=fx,
            step_norm_sq=step_sq,
            W=fx + step_sq / (2.0 * s),
            sigma_per_ref=sig,
            E_per_ref=E,
            zeta=zt,
            merit_surrogate=float(sig.max()),
            criticality_residual=criticality_residual(p, x, self.crit_tol),
            summability_partial=summ,
        )
        self.rows.append(row.as_vector())
        return row

    def after_step(self, old, info, new):
        if self.a is None:
            return
        y = info.y
        d = new.x_cur - y
        s = self.s
        # -<x_{k+1} - y_k, y_k - z>/s equals <d, z - y>/s
        self._pending = ((self.Z - y) @ d) / s - (d @ d) / (2.0 * s)

    def _check_sigma(self, sig):
        self.sigma_step_worst = max(self.sigma_step_worst, float(np.max(sig - self._pending)))
        self.sigma_step_checked += 1
        self._pending = None

    def close(self, final_state):
        if self._pending is not None:
            self._check_sigma(self._sigma(final_state.x_cur))
        if self.path is not None:
            write_csv(self.path, self.columns, self.table().data)

    def table(self):
        data = np.array(self.rows) if self.rows else np.empty((0, len(self.columns)))
        return DiagnosticsTable(self.columns, data)

    def in_run_checks(self):
        ok = self.sigma_step_worst <= SIGMA_STEP_SLACK
        return {
            "sigma_one_step": {
                "worst_violation": self.sigma_step_worst,
                "checked": self.sigma_step_checked,
                "pass": bool(ok),
            }
        }


class InvariantResult(NamedTuple):
    name: str
    status: str  # "pass", "fail" or "n/a"
    worst_violation: float
    detail: str = ""


def _result(name, excess, slack_ok, detail=""):
    """``excess`` is the raw amount by which a bound is exceeded (``<= 0`` fine)."""
    worst = float(max(0.0, np.max(excess))) if np.size(excess) else 0.0
    status = "pass" if bool(np.all(slack_ok)) else "fail"
    return InvariantResult(name, status, worst, detail)


def discrete_invariants(table, meta):
    """Recompute every discrete convergence inequality from a diagnostics table.

    ``meta`` needs ``mode`` (``"mag_gm"`` or ``"msd"``), ``s``, ``a``, ``b``,
    ``tail_index`` and ``R_hat`` (``None`` when unknown). Returns a list of
    :class:`InvariantResult`.
    """
    mode = meta["mode"]
    s = meta["s"]
    out = []
    n = len(table)
    f = table.block("f_")
    W = table.block("W_")
    sig = table.block("sigma_ref")
    step_sq = table.col("step_norm_sq")
    merit = table.col("merit")
    k = table.col("k")
    acc = mode == "mag_gm"

    # level containment f_i(x_k) <= f_i(x_0)
    if n:
        ex = f - f[0]
        out.append(_result("level_containment", ex, ex <= MONOTONE_SLACK * (1.0 + np.abs(f[0]))))
    else:
        out.append(InvariantResult("level_containment", "pass", 0.0))

    def monotone(name, series):
        if n < 2:
            return InvariantResult(name, "pass", 0.0)
        ex = series[1:] - series[:-1]
        return _result(name, ex, ex <= MONOTONE_SLACK * (1.0 + np.abs(series[:-1])))

    out.append(monotone("energy_monotone", W) if acc else InvariantResult("energy_monotone", "n/a", 0.0))
    out.append(monotone("msd_descent", f) if not acc else InvariantResult("msd_descent", "n/a", 0.0))

    if acc and n:
        a, b = meta["a"], meta["b"]
        checks = schedule_checks(a, b, table.col("t_k"))
        worst = max(checks.values())
        out.append(
            InvariantResult(
                "schedule_properties",
                "pass" if worst <= 1e-9 else "fail",
                float(max(0.0, worst)),
                ", ".join(f"{key}={val:.3g}" for key, val in checks.items()),
            )
        )
        E = table.block("E_ref")
        if n >= 2:
            zt = table.col("zeta")[:-1, None]
            ex = E[1:] - E[:-1] + zt * sig[:-1]
            out.append(_result("lyapunov_one_step", ex, ex <= LYAPUNOV_SLACK * (1.0 + np.abs(E[:-1]))))
        else:
            out.append(InvariantResult("lyapunov_one_step", "pass", 0.0))
        R = meta.get("R_hat")
        u0 = merit[0]
        if R is None:
            out.append(InvariantResult("rate_bound", "n/a", 0.0, "no level radius"))
        else:
            lhs = merit * s * (1.0 - a) ** 2 * k**2
            rhs = s * u0 + R * R
            ex = lhs - rhs
            out.append(_result("rate_bound", ex, ex <= 1e-9 * (1.0 + rhs), f"rhs={rhs:.6g}"))
        tail = meta.get("tail_index")
        if tail is None:
            out.append(InvariantResult("cluster_point", "n/a", 0.0, "no tail reference"))
        else:
            ex = -sig[:, tail] - step_sq / (2.0 * s)
            out.append(_result("cluster_point", ex, ex <= CLUSTER_SLACK))
        ps = table.col("sum_partial")
        if R is None:
            out.append(InvariantResult("summability", "n/a", 0.0, "no level radius"))
        else:
            res = summability_check(ps, a, b, s, u0, R, k)
            ex = ps - res.bound * (1.0 + SUMMABILITY_MARGIN)
            out.append(
                InvariantResult(
                    "summability",
                    "fail" if res.violated else "pass",
                    float(max(0.0, np.max(ex))) if n else 0.0,
                    f"bound={res.bound:.6g}, tail_increment={res.tail_increment:.3g}",
                )
            )
    else:
        for name in ("schedule_properties", "lyapunov_one_step", "rate_bound", "cluster_point", "summability"):
            out.append(InvariantResult(name, "n/a", 0.0))

    if meta.get("tail_index") is not None and n:
        # the tail reference is the last recorded iterate, so only that row
        # is guaranteed a zero term in the max
        ex = MERIT_FLOOR - merit[-1]
        out.append(_result("merit_nonnegative", ex, merit[-1] >= MERIT_FLOOR))
    else:
        out.append(InvariantResult("merit_nonnegative", "n/a", 0.0))

    crit = table.col("crit_residual")
    out.append(InvariantResult("criticality_final", "n/a", 0.0, f"reported only: {crit[-1]:.3e}" if n else ""))
    return out


def write_sidecar(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)
