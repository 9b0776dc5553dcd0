"""Command line entry point: ``magm run | sweep | check | report``."""

import argparse
import json
import sys

from .config import parse_config, parse_sweep
from .errors import ConfigError, FormatError
from .harness import emit_report, report_exit_code, run_plan, run_sweep


def _read(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _summary(report):
    lines = [f"termination: {report.get('termination')}  rate_slope: {report.get('rate_slope')}"]
    for r in report.get("invariant_results", []):
        lines.append(f"  {r['status']:>4}  {r['name']:<22} worst={r['worst_violation']}  {r['detail']}")
    if report.get("error"):
        lines.append(f"  error: {report['error']}")
    return "\n".join(lines)


def cmd_run(args):
    plan = parse_config(_read(args.config))
    plan = plan.with_output(args.out, args.store_iterates or None)
    outcome = run_plan(plan)
    print(f"run directory: {outcome.out_dir}")
    print(_summary(outcome.report))
    return outcome.exit_code


def cmd_sweep(args):
    plans = parse_sweep(_read(args.config), out=args.out)
    if args.store_iterates:
        plans = [p.with_output(store_iterates=True) for p in plans]
    results = run_sweep(plans, workers=args.workers)
    for out_dir, code in results:
        print(f"{code}  {out_dir}")
    return max(code for _, code in results)


def cmd_report(args):
    report = emit_report(args.run_dir)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(_summary(report))
    return report_exit_code(report)


def cmd_check(args):
    from .acceptance import run_all

    results = run_all(quick=args.quick, only=args.only)
    return 0 if all(r.passed for r in results) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="magm", description="Accelerated multiobjective gradient experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute one plan")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--store-iterates", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="execute every plan of a sweep document")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override the base output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--store-iterates", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the built-in acceptance suite")
    p.add_argument("--quick", action="store_true", help="shortened runs (smoke test, not the stated criteria)")
    p.add_argument("--only", type=int, nargs="*", default=None, help="criterion numbers to run")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", help="recompute the report of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--json", action="store_true", help="print the full report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
