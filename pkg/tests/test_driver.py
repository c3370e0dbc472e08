import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blowup_ode.bench import measure_error
from blowup_ode.driver import (
    GuardTrip,
    SolveError,
    StopPolicy,
    StopReason,
    extrapolate_x_star,
    naive_failure_demo,
    solve,
    solve_two_stage,
    write_csv,
)
from blowup_ode.problems import Kind, exact_eval, make_problem, registry_get
from blowup_ode.stepper import HaltReason
from blowup_ode.transforms import Method, TransformSpec


def max_error_pct(ps, sol, cap=50.0, component=0):
    """Largest relative error of the growth column against the exact y(x) while Λ <= cap."""
    worst = 0.0
    for x, row, lam in zip(ps.x, ps.states, ps.lambda_m):
        if lam > cap:
            break
        exact = exact_eval(sol, x)[component]
        worst = max(worst, abs(row[component] - exact) / abs(exact))
    return 100 * worst


# ------------------------------------------------------------------- solve


def test_power1_exp_type_error():
    p, sol = registry_get("power1")
    r = solve(p, TransformSpec(Method.EXP_F_OVER_Y), h=0.2)
    assert r.stop_reason is StopReason.LAMBDA_TARGET
    assert r.ps.lambda_m[-1] >= 50
    assert max_error_pct(r.ps, sol) <= 0.005


def test_power1_differential_error():
    p, sol = registry_get("power1")
    r = solve(p, TransformSpec(Method.DIFFERENTIAL), h=0.2)
    assert max_error_pct(r.ps, sol) <= 0.02


def test_ode2_power_t_over_y_error():
    # the quoted figure is the integrated exponential slot against y0 e^xi
    p, sol = registry_get("ode2-power")
    spec = TransformSpec(Method.EXP_T_OVER_Y, closed_form=False)
    assert measure_error(p, sol, spec, 0.4, metric="slot") <= 0.1


def test_system3_growth_auto():
    # at h=0.1 the non-generic branch y3(x*) = 0 amplifies errors; h=0.01 is used
    p, sol = registry_get("system3")
    r = solve(p, TransformSpec(Method.GROWTH, k="auto"), h=0.01)
    assert r.growth_index == 2
    assert max_error_pct(r.ps, sol, component=1) <= 0.05


def test_extrapolated_at_least_estimate():
    p, _ = registry_get("power1")
    for method in (Method.EXP_F_OVER_Y, Method.HODOGRAPH, Method.ARC_LENGTH, Method.DIFFERENTIAL):
        r = solve(p, TransformSpec(method), h=0.1)
        assert r.x_star_extrapolated >= r.x_star_estimate


@pytest.mark.parametrize(
    "name, spec",
    [
        ("power1", TransformSpec(Method.EXP_F_OVER_Y)),
        ("exp1", TransformSpec(Method.EXP_F_OVER_Y)),
        ("sing-pole1", TransformSpec(Method.EXP_F_OVER_Y)),
        ("riccati-decreasing", TransformSpec(Method.EXP_F_OVER_Y)),
        ("ode2-power", TransformSpec(Method.EXP_T_OVER_Y)),
        ("ode2-exp", TransformSpec(Method.EXP_T_OVER_Y)),
        ("ode3-power", TransformSpec(Method.EXP_W_OVER_T)),
        ("system3", TransformSpec(Method.GROWTH, k=2)),
    ],
)
def test_lambda_monotone_over_tail(name, spec):
    p, _ = registry_get(name)
    h = 0.01 if name == "system3" else 0.05
    lam = solve(p, spec, h=h).ps.lambda_m
    tail = lam[int(0.75 * len(lam)):]
    assert np.all(np.diff(tail) >= 0)


@pytest.mark.parametrize("method", [Method.EXP_F_OVER_Y, Method.HODOGRAPH, Method.ARC_LENGTH, Method.DIFFERENTIAL])
def test_extrapolation_cauchy_consistency(method):
    p, _ = registry_get("power1")
    spec = TransformSpec(method)
    a = solve(p, spec, StopPolicy(lambda_target=50), 0.05)
    b = solve(p, spec, StopPolicy(lambda_target=100), 0.05)
    gap = abs(a.x_star_extrapolated - a.x_star_estimate)
    assert abs(b.x_star_extrapolated - a.x_star_extrapolated) < gap


def test_overflow_cap_stop_keeps_trajectory():
    p, _ = registry_get("power1")
    r = solve(p, TransformSpec(Method.EXP_F_OVER_Y), StopPolicy(lambda_target=1e30, overflow_cap=1e6), 0.1)
    assert r.stop_reason is StopReason.OVERFLOW_CAP
    assert r.ps.y[-1] > 1e6 and np.all(r.ps.y[:-1] <= 1e6)


def test_xi_max_stop():
    p, _ = registry_get("power1")
    r = solve(p, TransformSpec(Method.HODOGRAPH), StopPolicy(hard_xi_max=5.0), 0.1)
    assert r.stop_reason is StopReason.XI_MAX
    assert r.ps.xi[-1] == pytest.approx(5.0)


def test_guard_trip_carries_partial_report():
    p, _ = registry_get("power1")
    with pytest.raises(GuardTrip) as info:
        solve(p, TransformSpec(Method.NONLOCAL, g="1/y^40"), h=0.1)
    report = info.value.report
    assert report.stop_reason is StopReason.DENOMINATOR
    assert len(report.ps) >= 1
    assert "below" in report.detail


def test_stop_policy_validation():
    with pytest.raises(ValueError):
        StopPolicy(lambda_target=0)


def test_solve_is_deterministic():
    p, _ = registry_get("ode2-power")
    a = solve(p, TransformSpec(Method.ARC_LENGTH), h=0.1)
    b = solve(p, TransformSpec(Method.ARC_LENGTH), h=0.1)
    assert np.array_equal(a.ps.states, b.ps.states)
    assert a.to_json() == b.to_json()


# ------------------------------------------------------------ extrapolation


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.1, 3.0), st.floats(0.05, 0.5), st.floats(-2.0, 2.0))
def test_extrapolation_exact_on_exponential_tail(x_star, c, rate_h, offset):
    taus = np.arange(40) * 0.25
    xs = x_star + offset - c * np.exp(-rate_h * 4 * taus)
    got, model = extrapolate_x_star(taus, xs)
    assert model in ("exponential", "converged")
    assert got == pytest.approx(x_star + offset, rel=1e-6, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.1, 2.0), st.floats(0.5, 2.0))
def test_extrapolation_on_power_tail(x_star, c, q):
    taus = 1.0 + np.arange(400) * 0.25
    xs = x_star - c * taus**-q
    got, model = extrapolate_x_star(taus, xs)
    assert model == "power"
    assert got == pytest.approx(x_star, rel=1e-6)


def test_extrapolation_short_inputs():
    assert extrapolate_x_star([0, 1], [0.1, 0.2]) == (0.2, "none")
    x, model = extrapolate_x_star([0, 1, 2], [0.0, 0.5, 0.75])
    assert model == "exponential" and x == pytest.approx(1.0)


def test_extrapolation_never_below_last():
    x, _ = extrapolate_x_star([0, 1, 2, 3, 4], [0.0, 1.0, 1.5, 1.6, 1.65])
    assert x >= 1.65


def test_extrapolation_converged_sequence():
    assert extrapolate_x_star([0, 1, 2, 3], [0.9, 1.0, 1.0, 1.0]) == (1.0, "converged")


# ---------------------------------------------------------------- two-stage


def test_two_stage_decreasing_riccati():
    p, sol = registry_get("riccati-decreasing")
    r = solve_two_stage(p, h=0.05)
    assert r.stage_boundary is not None
    x_m, y_m = r.stage_boundary
    assert y_m >= 30
    assert abs(r.x_star_extrapolated - (2 - math.sqrt(2))) <= 1e-3
    assert max_error_pct(r.ps, sol, cap=math.inf) <= 0.1
    assert r.ps.param_name == "stitched"
    assert np.all(np.diff(r.ps.x) > 0)


def test_two_stage_continuity_at_boundary():
    p, _ = registry_get("riccati-decreasing")
    r = solve_two_stage(p, h=0.05)
    stage1, stage2 = r.stages
    assert stage2.x[0] == stage1.x[-1]
    assert stage2.y[0] == stage1.y[-1]


def test_two_stage_no_blow_up():
    p, sol = registry_get("zero-rhs", {"a": 1.0, "b": 1.38})
    assert sol.x_star is None
    r = solve_two_stage(p, h=0.05)
    assert r.stage_boundary is None
    assert r.x_star_estimate is None
    assert r.stop_reason is StopReason.NO_BLOW_UP
    y = r.ps.y
    assert np.all(np.isfinite(y))
    x_peak = r.ps.x[int(np.argmax(y))]
    assert x_peak == pytest.approx(1.38, abs=0.01)
    assert y.max() == pytest.approx(1 / (1 - 1.38**2 / 2), rel=1e-6)


def test_two_stage_power1_matches_plain_solve():
    p, _ = registry_get("power1")
    r = solve_two_stage(p, h=0.1)
    x_m, y_m = r.stage_boundary
    plain = solve(p.with_initial(x_m, [y_m]), TransformSpec(Method.EXP_F_OVER_Y), h=0.1)
    assert r.x_star_extrapolated == plain.x_star_extrapolated
    assert np.array_equal(r.stages[1].x, plain.ps.x)
    assert r.x_star_extrapolated == pytest.approx(1.0, rel=1e-4)


def test_two_stage_rejects_higher_order():
    p, _ = registry_get("ode2-power")
    with pytest.raises(SolveError):
        solve_two_stage(p)


# ------------------------------------------------------------------- naive


def test_naive_rk4_overflows_past_pole():
    p, _ = registry_get("power1")
    traj = naive_failure_demo(p, "rk4", 0.01)
    assert traj.halt_reason is HaltReason.NON_FINITE
    assert traj.halt_tau > 1.0


def test_naive_higher_order_overflows_sooner():
    p, _ = registry_get("power1")
    halts = {m: naive_failure_demo(p, m, 0.01).halt_tau for m in ("rk4", "midpoint", "euler")}
    assert halts["rk4"] < halts["midpoint"] < halts["euler"]


@pytest.mark.parametrize("method", ["rk4", "midpoint", "euler"])
def test_naive_linear_reaches_end(method):
    p = make_problem(Kind.FIRST, ["y"], 0.0, [1.0])
    traj = naive_failure_demo(p, method, 0.01, x_end=5.0)
    assert traj.halt_reason is HaltReason.REACHED_END


# ------------------------------------------------------------------ export


def test_csv_export(tmp_path):
    p, _ = registry_get("ode2-power")
    r = solve(p, TransformSpec(Method.EXP_T_OVER_Y), h=0.2)
    path = tmp_path / "out.csv"
    write_csv(r.ps, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["xi", "x", "y", "t", "lambda_m"]
    assert len(rows) == len(r.ps) + 1
    assert float(rows[-1][1]) == r.ps.x[-1]


def test_csv_first_order_differential_has_t_column(tmp_path):
    p, _ = registry_get("power1")
    r = solve(p, TransformSpec(Method.DIFFERENTIAL), h=0.2)
    path = tmp_path / "out.csv"
    write_csv(r.ps, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["t", "x", "y", "t", "lambda_m"]


def test_report_json_round_trips():
    p, _ = registry_get("power1")
    r = solve(p, TransformSpec(Method.EXP_F_OVER_Y), h=0.2)
    doc = json.loads(json.dumps(r.to_json()))
    assert doc["problem"] == "power1"
    assert doc["transform"] == {"method": "exp-f-over-y"}
    assert doc["stop_reason"] == "lambda_target"
    assert doc["x_star_extrapolated"] == r.x_star_extrapolated
    assert doc["tail_inv_beta"] == pytest.approx(1.0, abs=0.05)
