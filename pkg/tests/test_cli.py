import csv
import json

import numpy as np
import pytest

from drdyn.cli import build_parser, main, resolve_config


def _rows(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def test_iterate_converges(tmp_path, capsys):
    code, out = _run(tmp_path, "iterate", "--lambda", "0", "--start", "2,0")
    assert code == 0
    assert "converged at step 1" in capsys.readouterr().out
    rows = _rows(out / "trajectory.csv")
    assert [r["k"] for r in rows] == ["0", "1"]
    assert rows[1]["x_1"] == "1" and rows[1]["x_2"] == "0"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["converged_step"] == 1
    assert (out / "trajectory.csv").read_text().startswith(f"# config_sha256={manifest['config_sha256']}\n")


@pytest.mark.parametrize(
    "argv, code",
    [
        (["iterate", "--lambda", "1.5", "--start", "1,0", "--n", "500"], 2),
        (["iterate", "--start", "0,0"], 65),
        (["iterate", "--lambda", "-1", "--start", "1,0"], 65),
        (["iterate", "--bogus"], 64),
        (["iterate"], 64),
        (["iterate", "--start", "1,x"], 64),
        (["perturbed", "--lambda", "1", "--starts", "1,0"], 65),
        (["perturbed", "--starts", "0,1"], 65),
        (["certify", "--grid", "0.5:1.5:0"], 64),
        (["certify", "--grid=-1:1:3"], 65),
        (["perturbed", "--starts", "1,0", "--mode", "sideways"], 64),
    ],
)
def test_exit_codes(tmp_path, argv, code):
    assert _run(tmp_path, *argv)[0] == code


def test_h0_start_is_a_domain_error(tmp_path, capsys):
    code, _ = _run(tmp_path, "iterate", "--start", "0,2", "--lambda", "0.5")
    assert code == 65
    assert "origin" in capsys.readouterr().err


def test_zero_gain_ensemble_matches_iterate(tmp_path):
    _, a = _run(tmp_path, "iterate", "--start", "1.5,1", "--n", "60", "--no-early-stop", name="a")
    _, b = _run(tmp_path, "perturbed", "--starts", "1.5,1", "--c", "0", "--n", "60", name="b")
    exact = _rows(a / "trajectory.csv")
    pert = _rows(b / "ensemble.csv")
    assert len(exact) == len(pert) == 61
    for e, p in zip(exact, pert):
        assert all(p[k] == v for k, v in e.items())


def test_reruns_are_byte_identical(tmp_path):
    argv = ["perturbed", "--starts", "1,0;0.5,1", "--c", "0.05", "--mode", "adversarial", "--m", "4",
            "--runs", "3", "--n", "100", "--seed", "9"]
    _, a = _run(tmp_path, *argv, name="a")
    _, b = _run(tmp_path, *argv, "--threads", "3", name="b")
    for f in ("ensemble.csv", "manifest.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_config_precedence(tmp_path):
    parser = build_parser()
    args = parser.parse_args(["iterate", "--start", "1,0"])
    assert resolve_config(args, {"DRDYN_SEED": "7"}).seed == 7
    args = parser.parse_args(["iterate", "--start", "1,0", "--seed", "3"])
    assert resolve_config(args, {"DRDYN_SEED": "7"}).seed == 3
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"lam": 0.25, "seed": 11}))
    args = parser.parse_args(["iterate", "--start", "1,0,0", "--lambda", "0.9", "--seed", "3", "--config", str(cfg_file)])
    rc = resolve_config(args, {})
    assert (rc.lam, rc.seed, rc.d) == (0.25, 11, 3)
    cfg_file.write_text(json.dumps({"nonsense": 1}))
    assert main(["iterate", "--start", "1,0", "--config", str(cfg_file), "--out", str(tmp_path)]) == 64


def test_seed_env_changes_output(tmp_path, monkeypatch):
    argv = ["perturbed", "--starts", "1,0", "--c", "0.1", "--n", "20"]
    _, a = _run(tmp_path, *argv, name="a")
    monkeypatch.setenv("DRDYN_SEED", "5")
    _, b = _run(tmp_path, *argv, name="b")
    assert json.loads((b / "manifest.json").read_text())["config"]["seed"] == 5
    assert (a / "ensemble.csv").read_bytes() != (b / "ensemble.csv").read_bytes()


def test_lyapunov_scan(tmp_path):
    code, out = _run(tmp_path, "lyapunov-scan", "--lambda", "0.6", "--grid", "0.1:1:10,-0.4:1.6:11",
                     "--budget", "20000", "--gnuplot")
    assert code == 0
    scan = _rows(out / "scan.csv")
    U = np.array([float(r["U"]) for r in scan])
    W = np.array([float(r["W"]) for r in scan])
    assert np.all(W >= -1e-10) and np.all(U >= 0)
    best = scan[int(np.argmin(U))]
    assert (float(best["x_1"]), float(best["x_2"])) == (0.8, 0.6)
    for name in ("g", "alpha"):
        rows = _rows(out / f"{name}.csv")
        assert list(rows[0]) == ["t", "value", "budget", "eps_floor", "r_extent", "seed"]
        assert rows[0]["t"] == "0" and float(rows[0]["value"]) == 0.0
        assert rows[0]["budget"] == "20000"
    dat = (out / "scan.dat").read_text().splitlines()
    assert dat[0].startswith("# config_sha256=") and dat[1].startswith("# x_1 x_2 F")


def test_scan_outside_slab_is_domain_error(tmp_path):
    assert _run(tmp_path, "lyapunov-scan", "--grid", "0.5:2:4,0:1:2", "--budget", "1000")[0] == 65


def test_certify_runs(tmp_path):
    code, out = _run(tmp_path, "certify", "--grid", "0.5:1.5:3,-1:1:3", "--n", "300", "--runs", "4",
                     "--c", "0.05", "--m", "4", "--budget", "20000", "--sample-budget", "2000")
    report = json.loads((out / "report.json").read_text())
    assert code == (0 if report["passed"] else 2)
    assert report["checks"]["lyapunov"]["decrease"]["passed"]
    assert report["profile"]["mode"] == "adversarial"
    assert _rows(out / "envelope.csv")[0].keys() == {"s", "n", "beta"}
    names = {r["name"] for r in _rows(out / "curves.csv")}
    assert names == {"exact", "perturbed"}


def test_boundary(tmp_path):
    code, out = _run(tmp_path, "boundary", "--boundary-starts", "5", "--n", "10000")
    assert code == 0
    summary = json.loads((out / "boundary.json").read_text())["summary"]
    assert summary["lambda_one"]["all_converge_on_axis"]
    assert summary["lambda_above_one"]["none_converged"]
    assert summary["h0"]["all_stayed_in_h0"]
    assert len(_rows(out / "boundary.csv")) == 15


def test_perturbed_from_fixed_point_is_constant(tmp_path):
    _, out = _run(tmp_path, "perturbed", "--lambda", "0", "--starts", "1,0", "--c", "0.5", "--mode", "adversarial",
                  "--n", "25", "--runs", "2")
    rows = _rows(out / "ensemble.csv")
    assert len(rows) == 52
    assert {(r["x_1"], r["x_2"]) for r in rows} == {("1", "0")}


def test_certify_exact_case_and_calibration(tmp_path):
    common = ["certify", "--grid", "0.5:1.5:3,-1:1:3", "--n", "300", "--runs", "2", "--budget", "20000",
              "--sample-budget", "2000"]
    code, out = _run(tmp_path, *common, "--c", "0", name="exact")
    report = json.loads((out / "report.json").read_text())
    assert code == 0 and report["passed"]
    assert all(report["checks"]["lyapunov"][k]["passed"] for k in ("between", "decrease", "zero_set"))
    code, out = _run(tmp_path, *common, "--calibrate", "--c-candidates", "0.1,0.05", name="cal")
    report = json.loads((out / "report.json").read_text())
    assert report["calibration"]["admissible_c"] == 0.1
    assert report["profile"]["c"] == 0.1
    assert code == (0 if report["passed"] else 2)
