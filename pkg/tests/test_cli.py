import json
import subprocess
import sys

import pytest

from blowup_ode import bench
from blowup_ode.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_power1(tmp_path, capsys):
    prefix = str(tmp_path / "run")
    code, out, _ = run(["solve", "power1", "--method", "exp-f-over-y", "--h", "0.2", "--out", prefix], capsys)
    assert code == 0
    assert "x_star_extrapolated" in out
    doc = json.loads((tmp_path / "run.json").read_text())
    assert doc["x_star_extrapolated"] == pytest.approx(1.0, rel=1e-4)
    assert doc["transform"]["method"] == "exp-f-over-y"
    header = (tmp_path / "run.csv").read_text().splitlines()[0]
    assert header == "xi,x,y,lambda_m"


def test_solve_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["solve", "ode2-power", "--method", "exp-t-over-y", "--out", str(tmp_path / name)], capsys)[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_solve_system_growth_auto(tmp_path, capsys):
    code, out, _ = run(["solve", "system3", "--method", "growth-auto", "--h", "0.01", "--out", str(tmp_path / "s")], capsys)
    assert code == 0
    assert "growing component: 2" in out


def test_solve_constraint_with_gauge(tmp_path, capsys):
    argv = ["solve", "power1", "--method", "constraint", "--g", "f/(y*(1+2*xi))", "--out", str(tmp_path / "c")]
    assert run(argv, capsys)[0] == 0


def test_solve_params_override(tmp_path, capsys):
    argv = ["solve", "power1", "--param", "gamma=3", "--out", str(tmp_path / "g")]
    assert run(argv, capsys)[0] == 0
    doc = json.loads((tmp_path / "g.json").read_text())
    assert doc["x_star_extrapolated"] == pytest.approx(0.5, rel=1e-4)
    assert doc["tail_inv_beta"] == pytest.approx(2.0, abs=0.1)


def test_solve_two_stage(tmp_path, capsys):
    code, out, _ = run(["solve", "riccati-decreasing", "--two-stage", "--h", "0.05", "--out", str(tmp_path / "t")], capsys)
    assert code == 0
    assert "stage boundary" in out


def test_solve_problem_file(tmp_path, capsys):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"kind": "FirstOrder", "rhs": ["y^3"], "x0": 0, "initial": [1]}))
    code, out, _ = run(["solve", str(path), "--out", str(tmp_path / "f")], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "f.json").read_text())
    assert doc["x_star_extrapolated"] == pytest.approx(0.5, rel=1e-4)


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "power1", "--method", "bogus"],
        ["solve", "nope"],
        ["solve", "power1", "--param", "gamma=1"],
        ["solve", "power1", "--param", "gamma"],
        ["solve", "power1", "--method", "nonlocal"],
        ["solve", "power1", "--method", "exp-t-over-y"],
        ["solve", "power1", "--h", "-1"],
        ["solve", "missing.json"],
        ["estimate", "ode2-power"],
        ["estimate", "power1", "--mode", "exponents"],
    ],
)
def test_invalid_input_exit_2(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv, capsys)[0] == 2


def test_guard_trip_exit_3(tmp_path, capsys):
    prefix = str(tmp_path / "guard")
    code, out, err = run(["solve", "power1", "--method", "nonlocal", "--g", "1/y^40", "--out", prefix], capsys)
    assert code == 3
    assert "guard tripped" in err
    assert (tmp_path / "guard.csv").exists()


def test_estimate_failure_exit_3(capsys):
    code, _, err = run(["estimate", "power1", "--mode", "one-sided", "--minorant", "y^4", "--param", "a=0.5"], capsys)
    assert code == 3
    assert "minorant" in err


def test_estimate_two_sided(capsys):
    code, out, _ = run(["estimate", "riccati-x2"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["bracket"] == pytest.approx([0.7853981634, 1.0], abs=1e-8)


def test_estimate_one_sided_registry_minorant(capsys):
    code, out, _ = run(["estimate", "abel", "--mode", "one-sided"], capsys)
    assert code == 0
    assert json.loads(out)["I_g"] == pytest.approx(0.5, abs=1e-9)


def test_estimate_exponents(capsys):
    code, out, _ = run(["estimate", "system3"], capsys)
    doc = json.loads(out)
    assert code == 0
    assert doc["betas"] == [-1.0, 1.0, -2.0]
    assert doc["growing_index"] == 2


def test_demo_naive(capsys):
    code, out, _ = run(["demo-naive", "power1", "--method", "euler"], capsys)
    assert code == 0
    assert "NonFinite" in out
    halt = float(out.split("halted at x:")[1].split()[0])
    assert halt > 1.0


def test_list_problems(capsys):
    code, out, _ = run(["list-problems"], capsys)
    assert code == 0
    for name in ("power1", "system3", "ode3-power", "riccati-x2"):
        assert name in out


def test_bench_t1(tmp_path, capsys):
    code, out, _ = run(["bench", "--table", "T1", "--target", "0.1", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "ordering: PASS" in out
    lines = (tmp_path / "T1_0.1.csv").read_text().splitlines()
    assert lines[0] == "method,g,xi_max,h,n_points,max_error_pct"
    assert len(lines) == 7


def test_bench_ordering_mismatch_exit_4(tmp_path, capsys, monkeypatch):
    ref = dict(bench.REFERENCE_COUNTS)
    ref["T1"] = {0.1: (17, 24, 25, 125, 164, 213)}
    monkeypatch.setattr("blowup_ode.cli.REFERENCE_COUNTS", ref)
    monkeypatch.setattr(bench, "REFERENCE_COUNTS", ref)
    code, out, _ = run(["bench", "--table", "T1", "--target", "0.1", "--out", str(tmp_path)], capsys)
    assert code == 4
    assert "ordering: FAIL" in out


def test_bench_unpublished_target(tmp_path, capsys):
    code, out, _ = run(["bench", "--table", "T1", "--target", "0.5", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "no published counts" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "blowup_ode", "list-problems"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "power1" in proc.stdout
