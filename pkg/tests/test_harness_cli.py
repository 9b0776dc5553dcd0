import json
import os

import numpy as np
import pytest

from magm import cli
from magm.config import parse_config, parse_sweep
from magm.diagnostics import read_csv
from magm.errors import FormatError
from magm.harness import REPORT_FIELDS, emit_report, run_plan, run_sweep


def plan(tmp_path, text, name="run"):
    return parse_config(text + f"\ndir = {tmp_path / name}\n")


def test_k_max_rows_and_report(tmp_path):
    out = run_plan(plan(tmp_path, "problem = jos1\nn = 50\nk_max = 10\neps = 0"))
    assert out.exit_code == 0
    table = read_csv(os.path.join(out.out_dir, "diagnostics.csv"))
    assert len(table) == 10
    report = json.load(open(os.path.join(out.out_dir, "report.json")))
    assert set(REPORT_FIELDS) <= set(report)
    assert report["termination"] == "k_max_reached"
    assert all(r["status"] in ("pass", "n/a") for r in report["invariant_results"])
    # floats are 17-significant-digit strings
    assert isinstance(report["wall_time"], str) and float(report["wall_time"]) > 0


def test_runs_are_byte_identical(tmp_path):
    text = "problem = quadratic\nn = 6\nm = 3\nk_max = 40\neps = 0\na = 0.5\nb = 0.1"
    a = run_plan(plan(tmp_path, text, "a"))
    b = run_plan(plan(tmp_path, text, "b"))
    with open(os.path.join(a.out_dir, "diagnostics.csv"), "rb") as fa:
        with open(os.path.join(b.out_dir, "diagnostics.csv"), "rb") as fb:
            assert fa.read() == fb.read()
    ra, rb = dict(a.report), dict(b.report)
    for r in (ra, rb):
        r.pop("wall_time")
        r.pop("config_echo")
    assert ra == rb


def test_report_recomputes_in_run_result(tmp_path):
    out = run_plan(plan(tmp_path, "problem = jos1\nn = 5\nk_max = 300\neps = 0\na = 0.5\nb = 0.25"))
    again = emit_report(out.out_dir)
    assert again["invariant_results"] == out.report["invariant_results"]
    assert again["rate_slope"] == out.report["rate_slope"]


def test_store_iterates(tmp_path):
    out = run_plan(plan(tmp_path, "problem = jos1\nn = 3\nk_max = 12\neps = 0\nstore_iterates = true"))
    X = np.loadtxt(os.path.join(out.out_dir, "iterates.csv"), delimiter=",", skiprows=1)
    assert X.shape == (13, 3)


def test_msd_run(tmp_path):
    out = run_plan(plan(tmp_path, "problem = quadratic\nn = 5\nm = 2\nmode = msd\nk_max = 200\neps = 0"))
    assert out.exit_code == 0
    names = {r["name"]: r["status"] for r in out.report["invariant_results"]}
    assert names["msd_descent"] == "pass" and names["lyapunov_one_step"] == "n/a"
    assert float(out.report["rate_slope"]) < -0.9


def test_mavd_run_reports_slope(tmp_path):
    out = run_plan(plan(tmp_path, "problem = jos1\nn = 2\nmode = mavd\nalpha = 3\nt_end = 40"))
    assert out.exit_code == 0
    assert out.report["rate_slope"] is not None
    assert out.report["rate_series"] == "merit vs t"
    table = read_csv(os.path.join(out.out_dir, "trajectory.csv"), required=("t", "merit"))
    assert table.col("t")[-1] == 40.0


def test_abort_is_persisted(tmp_path):
    out = run_plan(plan(tmp_path, "problem = jos1\nn = 2\ns = 5.0"))
    assert out.exit_code == 2
    meta = json.load(open(os.path.join(out.out_dir, "run.json")))
    assert "InputError" in meta["error"]
    assert out.report["termination"] == "aborted"


def test_report_names_missing_column(tmp_path):
    out = run_plan(plan(tmp_path, "problem = jos1\nn = 2\nk_max = 5\neps = 0"))
    path = os.path.join(out.out_dir, "diagnostics.csv")
    lines = open(path).read().splitlines()
    header = lines[0].split(",")
    drop = header.index("step_norm_sq")
    with open(path, "w") as fh:
        for line in lines:
            fh.write(",".join(f for i, f in enumerate(line.split(",")) if i != drop) + "\n")
    with pytest.raises(FormatError, match="step_norm_sq"):
        emit_report(out.out_dir)
    assert cli.main(["report", out.out_dir]) == 2


def test_sweep_directories(tmp_path):
    plans = parse_sweep("problem = jos1\nn = 2\nk_max = 20\neps = 0\na, b = 0, 0.25 | 0.5, 0.0625\n", out=str(tmp_path))
    results = run_sweep(plans)
    assert [os.path.basename(d) for d, _ in results] == ["run_000", "run_001"]
    assert all(code == 0 for _, code in results)


def test_cli_run_and_report(tmp_path, capsys):
    cfg = tmp_path / "plan.cfg"
    cfg.write_text("problem = jos1\nn = 4\nk_max = 30\neps = 0\n")
    out = tmp_path / "cli_run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--store-iterates"]) == 0
    assert (out / "iterates.csv").exists()
    capsys.readouterr()
    assert cli.main(["report", str(out), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["termination"] == "k_max_reached"


def test_cli_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n = 2\nb = 0.3\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_cli_check_subset(capsys):
    assert cli.main(["check", "--only", "10", "11"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 2 and all(line.startswith("[PASS]") for line in out)
