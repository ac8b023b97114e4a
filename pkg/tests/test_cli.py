import json
import subprocess
import sys

import numpy as np
import pytest

from harmbound.cli import main
from harmbound.core import ObservationTable
from harmbound.oracle import DgpSpec, true_bounds

REPORT_KEYS = ["estimand", "point", "se", "ci_level", "ci", "n", "folds", "seed", "learners", "per_fold"]
FAST = ["--outcome", "sign-cells", "--effect", "sign-cells"]


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "sim.csv"
    assert main(["simulate", "--beta", "3", "--n", "2000", "--seed", "3", "--out", str(path)]) == 0
    return path


def test_simulate_then_estimate_round_trip(sim_csv, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["estimate", "--data", str(sim_csv), "--estimand", "fna-upper", "--out", str(out), *FAST]) == 0
    doc = json.loads(out.read_text())
    assert list(doc) == REPORT_KEYS
    assert doc["n"] == 2000 and doc["folds"] == 5 and doc["ci"][0] <= doc["point"] <= doc["ci"][1]
    assert "fna-upper" in capsys.readouterr().out


def test_json_goes_to_stdout_without_out(sim_csv, capsys):
    assert main(["estimate", "--data", str(sim_csv), "--estimand", "fna-lower", *FAST]) == 0
    captured = capsys.readouterr()
    assert list(json.loads(captured.out)) == REPORT_KEYS
    assert captured.err.startswith("fna-lower:")


def test_policy_estimand(sim_csv, capsys):
    args = ["estimate", "--data", str(sim_csv), "--estimand", "fna-lower-policy", "--pi0", "constant0", "--pi1", "threshold:1"]
    assert main(args + FAST) == 0
    assert json.loads(capsys.readouterr().out)["estimand"] == "fna-lower-policy"


@pytest.mark.filterwarnings("ignore::harmbound.learners.DegenerateLabelWarning")
def test_no_outcomes_no_harm(tmp_path, capsys):
    n = 200
    t = ObservationTable(np.random.default_rng(0).standard_normal((n, 2)), np.arange(n) % 2, np.zeros(n), np.full(n, 0.5))
    path = tmp_path / "zeros.csv"
    t.to_csv(path)
    assert main(["estimate", "--data", str(path), "--estimand", "fna-lower", "--propensity", "known"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["point"] == pytest.approx(0.0, abs=1e-12)
    assert doc["ci"][0] <= 0.0 <= doc["ci"][1]


@pytest.mark.parametrize("cmd", [["cvar"], ["estimate", "--estimand", "cvar-ite"]])
def test_cvar_interval_is_clamped(sim_csv, capsys, cmd):
    assert main([*cmd, "--data", str(sim_csv), "--alpha", "0.25", *FAST]) == 0
    lo, hi = json.loads(capsys.readouterr().out)["interval"]
    assert -1.0 <= lo <= hi <= 1.0


def test_upper_estimate_on_full_size_draw(tmp_path, capsys):
    path = tmp_path / "big.csv"
    assert main(["simulate", "--beta", "3", "--n", "12800", "--seed", "8", "--out", str(path)]) == 0
    assert main(["estimate", "--data", str(path), "--estimand", "fna-upper", "--folds", "5", *FAST]) == 0
    doc = json.loads(capsys.readouterr().out.split("\n", 1)[1])
    truth = true_bounds(DgpSpec(3.0), "fna-upper", 10**6, seed=1).interval.hi
    assert abs(doc["point"] - truth) <= 3 * doc["se"]


def test_simulate_half_outcomes(tmp_path):
    path = tmp_path / "s.csv"
    assert main(["simulate", "--beta", "0", "--n", "1000", "--seed", "1", "--out", str(path)]) == 0
    assert abs(ObservationTable.from_csv(path).y.mean() - 0.5) < 0.06


def test_simulate_is_byte_identical(tmp_path):
    paths = [tmp_path / f"{i}.csv" for i in range(2)]
    for p in paths:
        assert main(["simulate", "--beta", "3", "--n", "500", "--seed", "9", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_replicate_csv(tmp_path):
    out = tmp_path / "rep.csv"
    args = ["replicate", "--beta", "3", "--ns", "800,3200", "--reps", "2", "--mc-draws", "10000", "--out", str(out)]
    assert main(args + FAST) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n,estimand,estimator,rmse,coverage,mean_ci_width,reps,seed"
    keys = [tuple(line.split(",")[1:3]) for line in lines[1:]]
    for key in {("fna-lower", "ahe"), ("fna-lower", "plugin"), ("fna-upper", "ahe"), ("fna-upper", "plugin")}:
        assert keys.count(key) == 2


def test_oracle_bounds(capsys):
    assert main(["oracle-bounds", "--instances", "200"]) == 0
    assert json.loads(capsys.readouterr().out)["max_discrepancy"] <= 1e-4


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["estimate"],
        ["estimate", "--data", "x.csv"],
        ["estimate", "--data", "x.csv", "--estimand", "fna-middle"],
        ["simulate", "--beta", "3", "--n", "ten", "--out", "x.csv"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_one(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_missing_policy_exits_one(sim_csv):
    assert main(["estimate", "--data", str(sim_csv), "--estimand", "fna-upper-policy"]) == 1


def test_bad_config_exits_one(sim_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"outcome": "forest"}))
    assert main(["estimate", "--data", str(sim_csv), "--estimand", "fna-upper", "--config", str(cfg)]) == 1


def test_config_file_is_used(sim_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"outcome": "sign-cells", "effect": "sign-cells", "eta_mode": "plugin"}))
    assert main(["estimate", "--data", str(sim_csv), "--estimand", "fna-upper", "--config", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["learners"]["eta_mode"] == "plugin"


def test_missing_file_exits_two(tmp_path, capsys):
    assert main(["estimate", "--data", str(tmp_path / "none.csv"), "--estimand", "fna-lower"]) == 2


def test_invalid_rows_exit_two_with_line(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("x1,a,y\n0.1,1,1\n0.2,1,7\n")
    assert main(["estimate", "--data", str(path), "--estimand", "fna-lower"]) == 2
    assert "row 3:" in capsys.readouterr().err


def test_unwritable_output_exits_two(tmp_path):
    assert main(["simulate", "--beta", "1", "--n", "10", "--out", str(tmp_path / "missing" / "s.csv")]) == 2


def test_console_entry_point(tmp_path):
    path = tmp_path / "s.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "harmbound", "simulate", "--beta", "1", "--n", "20", "--out", str(path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and path.exists()
    proc = subprocess.run([sys.executable, "-m", "harmbound", "estimate"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage:" in proc.stderr
