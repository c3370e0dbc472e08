import csv
import math

import pytest

from blowup_ode.bench import (
    CSV_COLUMNS,
    REFERENCE_COUNTS,
    TABLES,
    BenchCell,
    BenchError,
    BenchTable,
    calibrate,
    check_table,
    measure_error,
    run_table,
    slow_enabled,
)
from blowup_ode.driver import StopPolicy
from blowup_ode.problems import registry_get
from blowup_ode.transforms import Method, TransformSpec

EXP_Y = TransformSpec(Method.EXP_F_OVER_Y)


def test_measure_error_power1():
    p, sol = registry_get("power1")
    assert measure_error(p, sol, EXP_Y, 0.2) <= 0.0045
    integrated = TransformSpec(Method.EXP_F_OVER_Y, closed_form=False)
    assert measure_error(p, sol, integrated, 0.2, metric="slot") == pytest.approx(0.0045, rel=0.1)
    assert measure_error(p, sol, integrated, 0.4, metric="slot") == pytest.approx(0.061, rel=0.15)


def test_measure_error_rk4_order():
    p, sol = registry_get("power1")
    spec = TransformSpec(Method.HODOGRAPH)
    ratio = measure_error(p, sol, spec, 0.2) / measure_error(p, sol, spec, 0.1)
    assert 12 <= ratio <= 20


def test_measure_error_requires_exact_solution():
    p, sol = registry_get("riccati-x2")
    with pytest.raises(BenchError):
        measure_error(p, sol, EXP_Y, 0.1)


def test_measure_error_run_stops_before_cap():
    p, sol = registry_get("power1")
    with pytest.raises(BenchError):
        measure_error(p, sol, TransformSpec(Method.HODOGRAPH), 0.1, StopPolicy(lambda_target=1e9, hard_xi_max=1e3))


def test_calibrate_exp_type():
    p, sol = registry_get("power1")
    cell = calibrate(p, sol, TransformSpec(Method.EXP_F_OVER_Y, closed_form=False), 0.1)
    assert cell.max_error_pct <= 0.1
    assert 25 * 0.7 <= cell.n_points <= 25 * 1.3
    assert cell.h == pytest.approx(0.157, rel=0.3)
    assert cell.xi_max == pytest.approx(3.93, rel=0.1)
    assert abs(cell.n_points - cell.xi_max / cell.h) <= 1


def test_calibrate_hodograph():
    p, sol = registry_get("power1")
    cell = calibrate(p, sol, TransformSpec(Method.HODOGRAPH), 0.1)
    assert 213 * 0.7 <= cell.n_points <= 213 * 1.3
    assert cell.xi_max == pytest.approx(49, rel=0.02)


def test_calibrate_third_order():
    p, sol = registry_get("ode3-power")
    cell = calibrate(p, sol, TransformSpec(Method.EXP_W_OVER_T, closed_form=False), 0.1)
    assert 38 * 0.7 <= cell.n_points <= 38 * 1.3


def test_calibrate_step_has_three_significant_digits():
    p, sol = registry_get("power1")
    cell = calibrate(p, sol, TransformSpec(Method.HODOGRAPH), 0.01)
    digits = cell.h / 10 ** (math.floor(math.log10(cell.h)) - 2)
    assert digits == pytest.approx(round(digits), abs=1e-6)


def test_calibrate_unreachable():
    p, sol = registry_get("power1")
    with pytest.raises(BenchError):
        calibrate(p, sol, EXP_Y, 1e-12, h_min=0.01)


def test_run_table_t1_fast():
    (table,) = run_table("T1", [0.1], slow=False)
    assert len(table.cells) == len(TABLES["T1"][1])
    check = check_table(table)
    assert check.ordering_ok and check.counts_ok, "\n".join(check.lines)
    assert [c.n_points for c in table.ranked()] == sorted((c.n_points for c in table.computed()), reverse=True)


def test_run_table_skips_slow_rows():
    (table,) = run_table("T3", [0.1], slow=False)
    assert table.cells[0] is None and table.cells[1] is None
    assert all(c is not None for c in table.cells[2:])
    assert check_table(table).ordering_ok


def test_run_table_unknown():
    with pytest.raises(KeyError):
        run_table("T9", [0.1])


def _synthetic(counts, table_id="T1", target=0.1):
    cells = tuple(BenchCell("m", "g", 1.0, 0.1, n, 0.05) for n in counts)
    return BenchTable(table_id, target, 50.0, cells)


def test_check_table_accepts_reference():
    check = check_table(_synthetic(REFERENCE_COUNTS["T1"][0.1]))
    assert check.ordering_ok and check.counts_ok


def test_check_table_detects_swap():
    counts = list(REFERENCE_COUNTS["T1"][0.1])
    counts[0], counts[1] = counts[1], counts[0]
    assert not check_table(_synthetic(counts)).ordering_ok


def test_check_table_accepts_either_order_for_ties():
    counts = list(REFERENCE_COUNTS["T1"][0.01])
    counts[3], counts[4] = 45, 46
    assert check_table(_synthetic(counts, target=0.01)).ordering_ok


def test_check_table_count_tolerances():
    counts = list(REFERENCE_COUNTS["T1"][0.1])
    counts[0] = int(213 * 1.35)
    assert not check_table(_synthetic(counts)).counts_ok
    counts = list(REFERENCE_COUNTS["T1"][0.1])
    counts[1] = int(164 * 1.9)  # arc-length family: factor 2
    check = check_table(_synthetic(counts))
    assert check.counts_ok


def test_table_csv(tmp_path):
    table = _synthetic(REFERENCE_COUNTS["T1"][0.1])
    path = tmp_path / "t.csv"
    table.write_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [int(r[4]) for r in rows[1:]] == list(REFERENCE_COUNTS["T1"][0.1])


def test_table_json():
    doc = _synthetic(REFERENCE_COUNTS["T1"][0.1]).to_json()
    assert doc["table"] == "T1" and doc["lambda_cap"] == 50.0
    assert doc["cells"][0]["n_points"] == 213


def test_slow_flag(monkeypatch):
    monkeypatch.setenv("BLOWUP_ODE_SLOW", "1")
    assert slow_enabled()
    monkeypatch.setenv("BLOWUP_ODE_SLOW", "")
    assert not slow_enabled()
