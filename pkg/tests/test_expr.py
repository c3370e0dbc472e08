import math

import numpy as np
import pytest
from hypothesis import given, settings

from blowup_ode.expr import (
    ExprSyntaxError,
    MissingBindingError,
    UnknownFunctionError,
    compile_partials,
    eval_with_partials,
    evaluate,
    parse,
    unparse,
)
from oracles import ad_fd_mismatches, expressions, points


def test_parse_single_variable():
    assert parse("y^2").free_vars == ("y",)


def test_parse_binds_parameters():
    e = parse("y^2/(b-x)", params=["b"])
    assert set(e.free_vars) == {"x", "y"}
    assert e.param_names == ("b",)


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("y^^2")
    assert info.value.offset == 2
    assert "offset 2" in str(info.value)


def test_offset_counts_bytes_not_characters():
    with pytest.raises(ExprSyntaxError) as info:
        parse("y + é")
    assert info.value.offset == 4


def test_unknown_function():
    with pytest.raises(UnknownFunctionError):
        parse("gamma(y)")


@pytest.mark.parametrize("src", ["", "(y", "y)", "2*", "exp y", "y 2"])
def test_malformed_inputs(src):
    with pytest.raises(ExprSyntaxError):
        parse(src)


def test_evaluate_examples():
    assert evaluate("y^2", {"y": 3}) == 9
    assert evaluate("exp(y)", {"y": 0}) == 1


def test_pole_returns_non_finite():
    v = evaluate("1/(b-x)", {"x": 1, "b": 1})
    assert not math.isfinite(v)


def test_missing_binding():
    with pytest.raises(MissingBindingError) as info:
        evaluate("x+y", {"x": 1})
    assert info.value.names == ["y"]


def test_precedence():
    assert evaluate("2*y^3", {"y": 2}) == 16
    assert evaluate("-y^2", {"y": 3}) == -9
    assert evaluate("2^3^2", {}) == 512
    assert evaluate("2^-1", {}) == 0.5
    assert evaluate("1-2-3", {}) == -4
    assert evaluate("8/4/2", {}) == 1


def test_negative_base_fractional_power_is_nan():
    assert math.isnan(evaluate("(-8)^(1/3)", {}))
    f = parse("y^0.5").compile(("y",))
    assert math.isnan(f(-4.0))


def test_partials_power_rule():
    d = eval_with_partials(parse("b*y^gamma", ["b", "gamma"]), {"b": 1, "gamma": 2, "y": 3}, ["y"])
    assert d.value == 9
    assert d.partials == {"y": 6}


def test_partials_pole_example():
    d = eval_with_partials("y^2/(b-x)", {"b": 2, "x": 1, "y": 1}, ["x", "y"])
    assert d.value == pytest.approx(1)
    assert d.partials["x"] == pytest.approx(1)
    assert d.partials["y"] == pytest.approx(2)


def test_partials_exp():
    d = eval_with_partials("exp(2*y)", {"y": 0}, ["y"])
    assert (d.value, d.partials["y"]) == (1, 2)


def test_abs_derivative_at_kink_is_zero():
    assert eval_with_partials("abs(y)", {"y": 0.0}, ["y"]).partials["y"] == 0
    assert eval_with_partials("abs(y)", {"y": -2.0}, ["y"]).partials["y"] == -1


def test_one_partial_per_seed():
    d = eval_with_partials("y^2", {"y": 1.0, "x": 0.0}, ["x", "y", "x"])
    assert set(d.partials) == {"x", "y"}
    assert d.partials["x"] == 0


def test_compiled_matches_tree_evaluation():
    src = "b*y^gamma + sin(x)*arctan(y)/sqrt(1+x^2) - ln(abs(y)+1)"
    e = parse(src, ["b", "gamma"])
    params = {"b": 1.5, "gamma": 2.0}
    f = e.compile(("x", "y"), params)
    for x, y in [(0.1, 0.2), (-1.0, 3.0), (2.0, -0.5)]:
        assert f(x, y) == pytest.approx(evaluate(e, {"x": x, "y": y, **params}), rel=1e-14)


def test_compiled_partials_match_dual_evaluator():
    e = parse("y^2/(b-x) + exp(-x*y)", ["b"])
    g = compile_partials(e, ("x", "y"), ("x", "y"), {"b": 2.0})
    v, (dx, dy) = g(0.3, 1.7)
    d = eval_with_partials(e, {"x": 0.3, "y": 1.7, "b": 2.0}, ["x", "y"])
    assert v == pytest.approx(d.value, rel=1e-14)
    assert dx == pytest.approx(d.partials["x"], rel=1e-13)
    assert dy == pytest.approx(d.partials["y"], rel=1e-13)


def test_compiled_overflow_falls_back_to_ieee():
    f = parse("exp(y)").compile(("y",))
    assert f(1000.0) == math.inf


def test_parameters_bound_at_evaluation_time():
    e = parse("b*y", ["b"])
    assert evaluate(e, {"y": 2, "b": 3}) == 6
    assert evaluate(e, {"y": 2, "b": 5}) == 10


@settings(max_examples=100, deadline=None)
@given(expressions, points)
def test_ad_agrees_with_finite_differences(src, pts):
    assert ad_fd_mismatches(src, pts) == []


@settings(max_examples=100, deadline=None)
@given(expressions, points)
def test_unparse_round_trip_evaluates_identically(src, pts):
    e = parse(src)
    again = parse(unparse(e))
    for x, y in pts:
        a = evaluate(e, {"x": x, "y": y})
        b = evaluate(again, {"x": x, "y": y})
        assert a == b or (math.isnan(a) and math.isnan(b))


@settings(max_examples=50, deadline=None)
@given(expressions, points)
def test_compile_agrees_with_evaluate(src, pts):
    e = parse(src)
    f = e.compile(("x", "y"))
    for x, y in pts:
        a, b = f(x, y), evaluate(e, {"x": x, "y": y})
        if math.isnan(b):
            assert math.isnan(a)
        else:
            assert a == pytest.approx(b, rel=1e-12, abs=1e-300) or a == b


def test_numpy_arrays_evaluate_elementwise():
    out = evaluate("y^2", {"y": np.array([1.0, 2.0, 3.0])})
    assert np.allclose(out, [1, 4, 9])
