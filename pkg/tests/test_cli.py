import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from skflow.cli import fmt, main
from skflow.paths import CadlagPath, read_csv, write_csv

SPEC = {"schema": 1, "drift": [0.5], "intensity": 1.0, "jump_law": {"kind": "fixed", "params": {"size": [0.1]}}}


@pytest.fixture
def spec_file(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(SPEC))
    return p


def write_path(path, file):
    with open(file, "w", newline="") as fh:
        write_csv(path, fh)
    return str(file)


def read_path(file):
    with open(file, newline="") as fh:
        return read_csv(fh)


def test_fmt():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(3) == "3"
    assert fmt(True) == "true"


def test_simulate_is_reproducible(tmp_path, spec_file):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--spec", str(spec_file), "--seed", "4", "--out", str(a)]) == 0
    assert main(["simulate", "--spec", str(spec_file), "--seed", "4", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    Y = read_path(a)
    assert Y.dim == 1 and Y.horizon == 1.0


def test_seed_from_environment(tmp_path, spec_file, monkeypatch):
    out = tmp_path / "y.csv"
    monkeypatch.delenv("SKFLOW_SEED", raising=False)
    assert main(["simulate", "--spec", str(spec_file), "--out", str(out)]) == 2
    monkeypatch.setenv("SKFLOW_SEED", "4")
    assert main(["simulate", "--spec", str(spec_file), "--out", str(out)]) == 0
    ref = tmp_path / "ref.csv"
    main(["simulate", "--spec", str(spec_file), "--seed", "4", "--out", str(ref)])
    assert out.read_bytes() == ref.read_bytes()
    monkeypatch.setenv("SKFLOW_SEED", "x")
    assert main(["simulate", "--spec", str(spec_file), "--out", str(out)]) == 2


@pytest.mark.parametrize("bad", [
    {k: v for k, v in SPEC.items() if k != "schema"},
    dict(SPEC, schema=2),
    dict(SPEC, colour="red"),
    dict(SPEC, jump_law={"kind": "cauchy", "params": {}}),
])
def test_spec_errors_exit_2(tmp_path, bad, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["simulate", "--spec", str(p), "--seed", "1", "--out", str(tmp_path / "y.csv")]) == 2
    assert "error" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["solve", "--coef", "linear"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    assert main(["metric", "--x", str(tmp_path / "missing.csv"), "--y", str(tmp_path / "missing.csv")]) == 2


def test_solve_writes_path_and_diagnostics(tmp_path, spec_file):
    Y = tmp_path / "y.csv"
    main(["simulate", "--spec", str(spec_file), "--seed", "2", "--out", str(Y)])
    H = write_path(CadlagPath.constant([1.0]), tmp_path / "h.csv")
    out, diag = tmp_path / "x.csv", tmp_path / "diag.csv"
    args = ["solve", "--coef", "linear", "--H", H, "--Y", str(Y), "--tol", "1e-6", "--out", str(out),
            "--diag", str(diag)]
    assert main(args) == 0
    X = read_path(out)
    assert X.a[0, 0] == 1.0
    rows = list(csv.DictReader(open(diag)))
    assert list(rows[0]) == ["n", "gap_to_f", "dist_to_prev", "residual", "skorokhod_upper"]
    assert rows[0]["skorokhod_upper"] == "nan"
    assert float(rows[-1]["dist_to_prev"]) < 1e-6
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_solve_reports_non_convergence(tmp_path, spec_file):
    Y = tmp_path / "y.csv"
    main(["simulate", "--spec", str(spec_file), "--seed", "2", "--out", str(Y)])
    H = write_path(CadlagPath.constant([1.0]), tmp_path / "h.csv")
    assert main(["solve", "--coef", "linear", "--H", H, "--Y", str(Y), "--nmax", "3",
                 "--out", str(tmp_path / "x.csv")]) == 1
    assert main(["solve", "--coef", "nope", "--H", H, "--Y", str(Y), "--out", str(tmp_path / "x.csv")]) == 2


def test_metric_exact_and_bound(tmp_path, capsys):
    x = write_path(CadlagPath.step([0.4], [0.0, 1.0]), tmp_path / "x.csv")
    y = write_path(CadlagPath.step([0.5], [0.0, 1.0]), tmp_path / "y.csv")
    assert main(["metric", "--x", x, "--y", y, "--exact"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(np.log(1.25), abs=1e-11)
    assert main(["metric", "--x", x, "--y", y]) == 0
    lo, hi = map(float, capsys.readouterr().out.split(","))
    assert lo <= np.log(1.25) + 1e-11 <= hi + 2e-11
    ramp = write_path(CadlagPath.linear([1.0]), tmp_path / "r.csv")
    assert main(["metric", "--x", x, "--y", ramp, "--exact"]) == 2


def test_malliavin_single_probe(tmp_path, spec_file):
    out = tmp_path / "d.csv"
    assert main(["malliavin", "--coef", "linear", "--spec", str(spec_file), "--seed", "3", "--r", "0.5",
                 "--v", "0.1", "--out", str(out)]) == 0
    D = read_path(out)
    assert np.all(D.values_at(np.linspace(0, 0.49, 10)) == 0.0)
    assert D.terminal[0] != 0.0
    assert main(["malliavin", "--coef", "linear", "--spec", str(spec_file), "--seed", "3",
                 "--out", str(out)]) == 2


def test_malliavin_grid(tmp_path):
    spec = dict(SPEC, jump_law={"kind": "normal", "params": {"mean": 0.0, "std": 0.2}})
    sf = tmp_path / "spec.json"
    sf.write_text(json.dumps(spec))
    out = tmp_path / "grid"
    assert main(["malliavin", "--coef", "linear", "--spec", str(sf), "--seed", "1", "--grid", "r:0.2:0.8:3,v:quadrature",
                 "--vnodes", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 6
    assert list(rows[0]) == ["probe", "r", "v", "sup_abs_D", "l2_contribution", "flagged"]
    assert all(r["flagged"] == "false" for r in rows)
    assert (out / "probe_0005.csv").exists()
    assert main(["malliavin", "--coef", "linear", "--spec", str(sf), "--seed", "1", "--grid", "r:0:2:3,v:quadrature",
                 "--out", str(out)]) == 2


def test_study_zero_samples_is_a_noop(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["study", "adaptedness", "--samples", "0", "--seed", "1", "--out", str(out)]) == 0
    assert "no-op" in capsys.readouterr().out
    assert json.loads((out / "summary.json").read_text())["noop"] is True


def test_study_outputs_are_byte_identical(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema": 1, "samples": 200}))
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["study", "driver-statistics", "--config", str(cfg), "--seed", "5", "--out", str(out),
                     "--gnuplot"]) in (0, 1)
        runs.append(out)
    assert (runs[0] / "driver-statistics.csv").read_bytes() == (runs[1] / "driver-statistics.csv").read_bytes()
    assert (runs[0] / "driver-statistics.gp").exists()
    lines = capsys.readouterr().out.splitlines()
    assert all(line.startswith(("PASS", "FAIL")) for line in lines)


def test_study_config_errors(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema": 1, "samples": 1, "bogus": 3}))
    assert main(["study", "adaptedness", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(json.dumps({"samples": 1}))
    assert main(["study", "adaptedness", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "o")]) == 2


def test_path_csv_round_trip_through_cli(tmp_path):
    x = CadlagPath([0.0, 0.1, 1.0], [[0.1], [1 / 3]], [[0.7], [-2 / 7]], [np.pi])
    p = write_path(x, tmp_path / "x.csv")
    back = read_path(p)
    # segment end values are stored, so slopes may move by an ulp
    assert back.times.tolist() == x.times.tolist()
    assert np.array_equal(back.a, x.a) and np.array_equal(back.terminal, x.terminal)
    assert np.array_equal(back.segment_ends(), x.segment_ends())


def test_console_entry_point(tmp_path, spec_file):
    out = tmp_path / "y.csv"
    res = subprocess.run([sys.executable, "-m", "skflow.cli", "simulate", "--spec", str(spec_file), "--seed", "4",
                          "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert out.exists()
