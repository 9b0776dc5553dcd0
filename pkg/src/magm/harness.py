"""Run orchestration, persistence and reports.

A run directory holds

- ``config.json``: the plan echo (parseable by :func:`magm.config.parse_config`)
- ``run.json``: resolved parameters, termination, timing and in-run checks
- ``diagnostics.csv`` (accelerated and descent runs) or ``trajectory.csv``
  (inertial dynamics)
- ``iterates.csv`` when iterates are stored
- ``report.json``: written by :func:`emit_report`, which recomputes every
  invariant from the CSV alone
"""

import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import diagnostics as dg
from . import mavd
from .config import plan_to_json
from .errors import FormatError, InputError, InsufficientDataError
from .problems import make_problem, pareto_reference, start_point
from .solver import SolverConfig, resolve_step, run, run_msd

CONFIG_FILE = "config.json"
META_FILE = "run.json"
DIAG_FILE = "diagnostics.csv"
TRAJ_FILE = "trajectory.csv"
ITER_FILE = "iterates.csv"
REPORT_FILE = "report.json"
REPORT_FIELDS = ("rate_slope", "rate_window", "invariant_results", "termination", "wall_time", "config_echo")


def fmt(x):
    """17-significant-digit decimal string (``None`` passes through)."""
    if x is None:
        return None
    return format(float(x), ".17g")


def _write_json(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def build_problem(plan):
    p = plan.problem
    problem = make_problem(p.name, p.n, p.m, p.seed)
    return problem, start_point(problem, p.x0_seed, p.x0_scale)


def _references(problem, plan, tail):
    refs = pareto_reference(problem, plan.output.ref_count, tail=tail)
    if plan.output.ref_tail and refs.tail_index is None:
        refs = refs.with_tail(tail)
    return refs


def _radius(problem, x0):
    return None if problem.level_radius_hint is None else float(problem.level_radius_hint(x0))


def _discrete(plan, out_dir, problem, x0, meta):
    sv = plan.solver
    s = resolve_step(problem, sv.s)
    meta.update(s=s, R_hat=_radius(problem, x0))
    if sv.mode == "mag_gm":
        cfg = SolverConfig(sv.a, sv.b, s, sv.eps, sv.k_max, sv.subproblem_tol)
        meta.update(a=sv.a, b=sv.b)

        def go(sink=None, store=False):
            return run(problem, cfg, x0, sink=sink, store_iterates=store)

    else:
        meta.update(a=None, b=None)

        def go(sink=None, store=False):
            return run_msd(problem, s, sv.eps, sv.k_max, x0, sink=sink, store_iterates=store, tol=sv.subproblem_tol)

    # the tail reference is the last recorded iterate of an identical pilot run
    pilot = go()
    refs = _references(problem, plan, pilot.final_state.x_prev)
    rec = dg.DiagnosticsRecorder(refs, path=os.path.join(out_dir, DIAG_FILE), crit_tol=sv.subproblem_tol)
    meta.update(tail_index=refs.tail_index, reference_origin=refs.origin, J=len(refs))
    result = go(rec, plan.output.store_iterates)
    meta.update(termination=result.termination, iterations=result.iterations, in_run=rec.in_run_checks())
    if result.iterates is not None:
        dg.write_csv(os.path.join(out_dir, ITER_FILE), [f"x_{i}" for i in range(problem.n)], result.iterates)


def _continuous(plan, out_dir, problem, x0, meta):
    sv = plan.solver
    samples = mavd.integrate(problem, sv.alpha, x0, sv.t_end, sv.dt, sv.sample_every)
    refs = _references(problem, plan, samples[-1].x)
    mavd.attach_diagnostics(problem, samples, sv.alpha, refs)
    table = mavd.trajectory_table(samples)
    cols = mavd.trajectory_columns(problem.n, problem.m, len(refs))
    dg.write_csv(os.path.join(out_dir, TRAJ_FILE), cols, table)
    worst = max(s.consistency for s in samples)
    meta.update(
        alpha=sv.alpha,
        dt=sv.dt,
        dt_max=mavd.DT_MAX,
        t_end=sv.t_end,
        R_hat=_radius(problem, x0),
        tail_index=refs.tail_index,
        reference_origin=refs.origin,
        J=len(refs),
        termination="t_end_reached",
        iterations=len(samples),
        in_run={
            "selection_consistency": {
                "worst_violation": worst,
                "checked": len(samples),
                "pass": bool(worst <= 0.0),
            }
        },
    )
    if plan.output.store_iterates:
        dg.write_csv(
            os.path.join(out_dir, ITER_FILE),
            ["t"] + [f"x_{i}" for i in range(problem.n)],
            np.array([np.concatenate([[s.t], s.x]) for s in samples]),
        )


@dataclass
class RunOutcome:
    out_dir: str
    report: Optional[dict]
    exit_code: int


def run_plan(plan):
    """Execute a plan and write the run directory.

    Returns
    -------
    RunOutcome
        ``exit_code`` is 0 when every invariant passes, 1 when one fails and
        2 when the run aborted (the error is recorded in ``run.json`` and the
        report).
    """
    out_dir = plan.output.dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir!r}: {exc}") from exc
    with open(os.path.join(out_dir, CONFIG_FILE), "w") as fh:
        fh.write(plan_to_json(plan) + "\n")
    meta = {"mode": plan.mode, "problem": plan.problem.name, "error": None}
    start = time.perf_counter()
    try:
        problem, x0 = build_problem(plan)
        meta.update(n=problem.n, m=problem.m, lipschitz_L=problem.lipschitz_L)
        if plan.mode == "mavd":
            _continuous(plan, out_dir, problem, x0, meta)
        else:
            _discrete(plan, out_dir, problem, x0, meta)
    except Exception as exc:  # persisted, then reported
        meta["error"] = f"{type(exc).__name__}: {exc}"
        meta["traceback"] = traceback.format_exc()
        meta.setdefault("termination", "aborted")
    meta["wall_time"] = time.perf_counter() - start
    _write_json(os.path.join(out_dir, META_FILE), meta)
    if meta["error"] is not None:
        report = {
            "rate_slope": None,
            "rate_window": None,
            "invariant_results": [],
            "termination": "aborted",
            "wall_time": fmt(meta["wall_time"]),
            "config_echo": plan.to_dict(),
            "error": meta["error"],
        }
        _write_json(os.path.join(out_dir, REPORT_FILE), report)
        return RunOutcome(out_dir, report, 2)
    report = emit_report(out_dir)
    return RunOutcome(out_dir, report, report_exit_code(report))


def report_exit_code(report):
    if report.get("error"):
        return 2
    return 1 if any(r["status"] == "fail" for r in report["invariant_results"]) else 0


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"{path}: missing") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def _fit(x, y, window):
    try:
        fit = dg.rate_fit(np.column_stack([x, y]), window)
        return fit.slope, f"used {fit.used}, excluded {fit.excluded}"
    except InsufficientDataError as exc:
        return None, str(exc)


def emit_report(run_dir):
    """Recompute invariants and the rate fit from the files in ``run_dir``.

    Writes ``report.json`` and returns its content.

    Raises
    ------
    FormatError
        Missing or corrupt files; the message names the offending column.
    """
    meta = _load_json(os.path.join(run_dir, META_FILE))
    config = _load_json(os.path.join(run_dir, CONFIG_FILE))
    if meta.get("error"):
        raise FormatError(f"{run_dir}: run aborted ({meta['error']})")
    mode = meta["mode"]
    solver = config.get("solver", {})
    window = solver.get("rate_window")
    if mode == "mavd":
        table = dg.read_csv(os.path.join(run_dir, TRAJ_FILE), required=("t", "merit", "v_norm", "accel_norm"))
        results = mavd.continuous_invariants(table, meta)
        t, merit = table.col("t"), table.col("merit")
        if window is None:
            window = [10.0, float(t[-1])]
        slope, note = _fit(t, merit, window)
        p = 2.0 * meta["alpha"] / 3.0
        bounded = float(np.max(t**p * merit))
        extra = {"rate_series": "merit vs t", "fit_note": note, "scaled_merit_max": fmt(bounded)}
    else:
        table = dg.read_csv(os.path.join(run_dir, DIAG_FILE), required=("k", "merit", "step_norm_sq", "t_k"))
        results = dg.discrete_invariants(table, meta)
        k, merit = table.col("k"), table.col("merit")
        if window is None:
            window = [min(100.0, float(k[-1])), float(k[-1])]
        slope, note = _fit(k, merit, window)
        extra = {"rate_series": "merit vs k", "fit_note": note}
    for name, check in sorted(meta.get("in_run", {}).items()):
        results.append(
            dg.InvariantResult(
                name, "pass" if check["pass"] else "fail", max(0.0, check["worst_violation"]), "in-run check"
            )
        )
    report = {
        "rate_slope": fmt(slope),
        "rate_window": [fmt(w) for w in window],
        "invariant_results": [
            {"name": r.name, "status": r.status, "worst_violation": fmt(r.worst_violation), "detail": r.detail}
            for r in results
        ],
        "termination": meta.get("termination"),
        "wall_time": fmt(meta.get("wall_time")),
        "config_echo": config,
    }
    report.update(extra)
    _write_json(os.path.join(run_dir, REPORT_FILE), report)
    return report


def _run_one(plan):
    outcome = run_plan(plan)
    return outcome.out_dir, outcome.exit_code


def run_sweep(plans, workers=1):
    """Run plans, in parallel up to ``workers`` processes. Returns ``[(dir, exit_code)]``."""
    dirs = [p.output.dir for p in plans]
    if len(set(dirs)) != len(dirs):
        raise InputError("sweep plans must have distinct output directories")
    if workers <= 1 or len(plans) <= 1:
        return [_run_one(p) for p in plans]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, plans))
