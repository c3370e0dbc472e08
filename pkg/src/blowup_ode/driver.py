"""Solve orchestration: Λ stopping, overflow guard, x* extrapolation, two-stage runs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.optimize import brentq

from .estimates import DiagnosticSeries, EstimateError, beta_diagnostic
from .problems import Kind, Problem
from .stepper import HaltReason, Trajectory, integrate
from .transforms import (
    Method,
    ParametricSolution,
    TransformSpec,
    TransformedProblem,
    build,
    decode,
)

__all__ = [
    "StopPolicy",
    "StopReason",
    "SolveReport",
    "SolveError",
    "GuardTrip",
    "solve",
    "solve_two_stage",
    "naive_failure_demo",
    "extrapolate_x_star",
    "write_csv",
]


@dataclass(frozen=True)
class StopPolicy:
    """When to stop integrating.

    Attributes:
        lambda_target: Stop once Λ reaches this value.
        hard_xi_max: Stop once the parameter has advanced this far.
        overflow_cap: Stop once any state magnitude exceeds this.
        max_steps: Hard cap on steps.
    """

    lambda_target: float = 50.0
    hard_xi_max: float = 1e7
    overflow_cap: float = 1e15
    max_steps: int = 5_000_000

    def __post_init__(self) -> None:
        if not self.lambda_target > 0:
            raise ValueError("lambda_target must be positive")
        if not self.overflow_cap > 0 or not self.hard_xi_max > 0:
            raise ValueError("overflow_cap and hard_xi_max must be positive")


class StopReason(str, Enum):
    LAMBDA_TARGET = "lambda_target"
    OVERFLOW_CAP = "overflow_cap"
    XI_MAX = "hard_xi_max"
    MAX_STEPS = "max_steps"
    NON_FINITE = "non_finite"
    DENOMINATOR = "denominator_guard"
    NO_BLOW_UP = "no_blow_up"


@dataclass(frozen=True)
class SolveReport:
    """Outcome of a solve.

    Attributes:
        ps: The (possibly stitched) parametric solution.
        x_star_estimate: Last computed x; None when no blow-up was detected.
        x_star_extrapolated: Tail-extrapolated x*; never below the estimate.
        diagnostics: 1/β series, when computable.
        stage_boundary: ``(x_m, y_m)`` where a two-stage run switched.
        stop_reason: Why integration ended.
        extrapolation_model: "exponential", "power", "converged" or "none".
        spec: Transformation used (last stage for two-stage runs).
        h: Step size.
        growth_index: 1-based component used by Λ.
        detail: Extra information, e.g. the guard message.
    """

    ps: ParametricSolution
    x_star_estimate: float | None
    x_star_extrapolated: float | None
    diagnostics: DiagnosticSeries | None
    stage_boundary: tuple[float, float] | None = None
    stop_reason: StopReason = StopReason.LAMBDA_TARGET
    extrapolation_model: str = "none"
    spec: TransformSpec | None = None
    h: float = 0.0
    growth_index: int = 1
    problem_name: str = ""
    detail: str = ""
    stages: tuple[ParametricSolution, ...] = field(default=(), repr=False)

    @property
    def tail_inv_beta(self) -> float | None:
        if self.diagnostics is None:
            return None
        try:
            value = self.diagnostics.tail_value
        except (ValueError, IndexError):
            return None
        return value if math.isfinite(value) else None

    def to_json(self) -> dict[str, Any]:
        ps = self.ps
        return {
            "problem": self.problem_name,
            "transform": self.spec.to_json() if self.spec else None,
            "h": self.h,
            "x_star_estimate": self.x_star_estimate,
            "x_star_extrapolated": self.x_star_extrapolated,
            "extrapolation_model": self.extrapolation_model,
            "stop_reason": self.stop_reason.value,
            "halt_reason": ps.halt_reason.value,
            "n_steps": len(ps) - 1,
            "param_name": ps.param_name,
            "param_final": float(ps.xi[-1]),
            "lambda_m_final": float(ps.lambda_m[-1]),
            "growth_index": self.growth_index,
            "tail_inv_beta": self.tail_inv_beta,
            "stage_boundary": list(self.stage_boundary) if self.stage_boundary else None,
            "detail": self.detail,
        }


class SolveError(RuntimeError):
    """A solve could not run or finish."""


class GuardTrip(SolveError):
    """A transformation's denominator guard fired; ``report`` holds the partial run."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------- extrapolation


def _aitken(x1: float, x2: float, x3: float) -> float | None:
    d1, d2 = x2 - x1, x3 - x2
    if not (d1 > 0 and d2 > 0):
        return None
    r = d2 / d1
    if not r < 1.0:
        return None
    return x3 + d2 * r / (1.0 - r)


def _power_fit(t1: float, t2: float, t3: float, x1: float, x2: float, x3: float) -> float | None:
    """Limit of ``x = x* - C τ^{-q}`` through three nodes with 0 < t1 < t2 < t3."""
    d1, d2 = x2 - x1, x3 - x2
    if not (d1 > 0 and d2 > 0 and 0 < t1 < t2 < t3):
        return None
    rho = d2 / d1

    def ratio(q: float) -> float:
        return (t2**-q - t3**-q) / (t1**-q - t2**-q) - rho

    lo, hi = 1e-8, 60.0
    try:
        if ratio(lo) * ratio(hi) > 0:
            return None
        q = brentq(ratio, lo, hi, xtol=1e-14)
    except (ValueError, OverflowError, ZeroDivisionError):
        return None
    C = d2 / (t2**-q - t3**-q)
    return x3 + C * t3**-q


def extrapolate_x_star(taus: Sequence[float], xs: Sequence[float]) -> tuple[float, str]:
    """Estimate lim x(τ) from the tail of a monotone run.

    Two tail models compete: an exponential approach ``x* - x = C e^{-ρτ}``
    (Aitken's formula on the last three nodes) and a power-law approach
    ``x* - x = C τ^{-q}`` (three-point fit on nodes at τ_L/4, τ_L/2, τ_L).
    Each model is also fitted on a second triple at a different scale; the
    model whose two estimates agree better wins.

    Returns:
        ``(x_star, model)`` with model "exponential", "power", "converged"
        or "none"; ``x_star`` is never below the last x.
    """
    taus = np.asarray(taus, dtype=float)
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    x_last = float(xs[-1]) if n else math.nan
    if n < 3 or not np.all(np.isfinite(xs[-3:])):
        return x_last, "none"
    noise = 64.0 * np.finfo(float).eps * max(1.0, abs(x_last))
    if 0 <= xs[-1] - xs[-2] <= noise:
        return x_last, "converged"
    L = n - 1
    exp1 = _aitken(xs[L - 2], xs[L - 1], xs[L])
    if n < 5:
        return (max(x_last, exp1), "exponential") if exp1 is not None else (x_last, "none")
    k = max(1, L // 4)
    exp2 = _aitken(xs[L - 2 * k], xs[L - k], xs[L])

    def node(t: float) -> int:
        return int(np.clip(np.searchsorted(taus, t), 0, L))

    def power_on(ratio: float) -> float | None:
        i1, i2 = node(taus[L] / ratio**2), node(taus[L] / ratio)
        if not 0 <= i1 < i2 < L:
            return None
        return _power_fit(taus[i1], taus[i2], taus[L], xs[i1], xs[i2], xs[L])

    pow1 = pow2 = None
    if taus[L] > 0:
        pow1, pow2 = power_on(2.0), power_on(math.sqrt(2.0))

    def spread(a: float | None, b: float | None) -> float:
        return abs(a - b) if a is not None and b is not None else math.inf

    s_exp, s_pow = spread(exp1, exp2), spread(pow1, pow2)
    if exp1 is not None and s_exp <= s_pow:
        return max(x_last, exp1), "exponential"
    if pow1 is not None and math.isfinite(s_pow):
        return max(x_last, pow1), "power"
    if exp1 is not None:
        return max(x_last, exp1), "exponential"
    return x_last, "none"


# ------------------------------------------------------------------ solve


def _run(tp: TransformedProblem, stop: StopPolicy, h: float, integrator: str):
    lam: list[float] = []
    flags: dict[str, bool] = {}
    target = stop.lambda_target
    cap = stop.overflow_cap
    tau_limit = tp.tau0 + stop.hard_xi_max

    def guard(s, tau, ds) -> bool:
        try:
            L = tp.lambda_m(s, tau, ds)
        except (ZeroDivisionError, OverflowError):
            L = math.nan
        lam.append(L)
        for v in tp.full_state(s, tau):
            if abs(v) > cap:
                flags["overflow"] = True
                return True
        if L >= target:
            return True
        if tau >= tau_limit:
            flags["xi_max"] = True
            return True
        return False

    s0 = list(tp.state0)
    ds0 = tp.field.eval(s0, tp.tau0)
    lam.append(tp.lambda_m(s0, tp.tau0, ds0))
    traj = integrate(tp.field, s0, tp.tau0, h, guard, method=integrator, max_steps=stop.max_steps)
    if len(lam) > len(traj.grid):
        lam = lam[: len(traj.grid)]
    if traj.halt_reason is HaltReason.NON_FINITE:
        reason = StopReason.NON_FINITE
    elif traj.detail:
        reason = StopReason.DENOMINATOR
    elif flags.get("overflow"):
        reason = StopReason.OVERFLOW_CAP
    elif flags.get("xi_max"):
        reason = StopReason.XI_MAX
    elif traj.halt_reason is HaltReason.GUARD_TRIGGERED:
        reason = StopReason.LAMBDA_TARGET
    else:
        reason = StopReason.MAX_STEPS
    return traj, lam, reason


def _diagnostics(ps: ParametricSolution) -> DiagnosticSeries | None:
    try:
        return beta_diagnostic(ps)
    except EstimateError:
        return None


def solve(
    p: Problem,
    spec: TransformSpec,
    stop: StopPolicy | None = None,
    h: float = 0.1,
    integrator: str = "rk4",
) -> SolveReport:
    """Integrate a transformed problem until Λ reaches the target.

    Args:
        p: Problem.
        spec: Transformation.
        stop: Stopping policy.
        h: Fixed step in the new independent variable.
        integrator: "rk4", "midpoint" or "euler".

    Returns:
        The report. Overflow-cap, step-cap and non-finite stops are reported
        through ``stop_reason`` with the trajectory kept.

    Raises:
        TransformError: the transformation cannot be built.
        GuardTrip: the denominator guard fired; the partial report is attached.
    """
    stop = stop or StopPolicy()
    tp = build(p, spec)
    traj, lam, reason = _run(tp, stop, h, integrator)
    ps = decode(tp, traj, lam)
    x_ext, model = extrapolate_x_star(ps.xi, ps.x)
    report = SolveReport(
        ps=ps,
        x_star_estimate=ps.x_star_estimate,
        x_star_extrapolated=x_ext,
        diagnostics=_diagnostics(ps),
        stop_reason=reason,
        extrapolation_model=model,
        spec=spec,
        h=h,
        growth_index=tp.growth_index + 1,
        problem_name=p.name,
        detail=traj.detail,
    )
    if reason is StopReason.DENOMINATOR:
        raise GuardTrip(traj.detail, report)
    return report


def solve_two_stage(
    p: Problem,
    stop: StopPolicy | None = None,
    h: float = 0.1,
    *,
    threshold: float = 30.0,
    x_limit: float | None = None,
    h1: float | None = None,
    integrator: str = "rk4",
    spec: TransformSpec | None = None,
) -> SolveReport:
    """Naive integration until the solution takes off, then an exp-type solve.

    Stage 1 integrates ``y' = f(x, y)`` directly with step ``h1`` until
    ``min(|y/y0|, |y'/y|) >= threshold`` at ``x_m``. Stage 2 restarts the
    problem at ``(x_m, y_m)`` under ``spec`` (default exp-f-over-y).

    Args:
        x_limit: Stage-1 cut-off; default ``x0 + 10``. Reaching it without
            the trigger gives a stage-1-only report (no blow-up detected).
        h1: Stage-1 step in x; default ``min(h, 0.002)``. The trigger window
            before a pole is only about ``1/threshold`` wide, so a coarse
            step can jump straight over the singularity.
    """
    if p.kind is not Kind.FIRST:
        raise SolveError("the two-stage strategy applies to first-order equations")
    stop = stop or StopPolicy()
    spec = spec or TransformSpec(Method.EXP_F_OVER_Y)
    f = p.compiled_rhs()[0]
    y0 = p.initial[0]
    scale = abs(y0) if y0 != 0 else 1.0
    x_end = p.x0 + 10.0 if x_limit is None else x_limit
    step1 = min(h, 0.002) if h1 is None else h1
    lam1: list[float] = []

    def field(s, x):
        return [f(x, s[0])]

    def trigger(y: float, slope: float) -> float:
        if y == 0.0:
            return 0.0
        return min(abs(y) / scale, abs(slope / y))

    def guard(s, x, ds) -> bool:
        L = trigger(s[0], ds[0])
        lam1.append(L)
        return L >= threshold

    lam1.append(trigger(y0, f(p.x0, y0)))
    traj = integrate(field, [y0], p.x0, step1, guard, method=integrator, tau_end=x_end,
                     max_steps=stop.max_steps)
    lam1 = lam1[: len(traj.grid)]
    xs = traj.grid
    stage1 = ParametricSolution(
        xi=xs.copy(),
        x=xs.copy(),
        states=traj.states.copy(),
        state_names=("y",),
        lambda_m=np.asarray(lam1),
        x_star_estimate=float(xs[-1]),
        halt_reason=traj.halt_reason,
        param_name="x",
    )
    if traj.halt_reason is not HaltReason.GUARD_TRIGGERED:
        reason = StopReason.NON_FINITE if traj.halt_reason is HaltReason.NON_FINITE else StopReason.NO_BLOW_UP
        return SolveReport(
            ps=stage1,
            x_star_estimate=None,
            x_star_extrapolated=None,
            diagnostics=None,
            stop_reason=reason,
            h=h,
            problem_name=p.name,
            detail="stage 1 ended without the blow-up trigger",
            stages=(stage1,),
        )
    x_m, y_m = float(xs[-1]), float(traj.states[-1, 0])
    second = solve(p.with_initial(x_m, [y_m]), spec, stop, h, integrator)
    ps2 = second.ps
    stitched = ParametricSolution(
        xi=np.concatenate([stage1.xi[:-1], x_m + ps2.xi]),
        x=np.concatenate([stage1.x[:-1], ps2.x]),
        states=np.vstack([stage1.states[:-1], ps2.states]),
        state_names=("y",),
        lambda_m=np.concatenate([stage1.lambda_m[:-1], ps2.lambda_m]),
        x_star_estimate=ps2.x_star_estimate,
        halt_reason=ps2.halt_reason,
        param_name="stitched",
    )
    return SolveReport(
        ps=stitched,
        x_star_estimate=second.x_star_estimate,
        x_star_extrapolated=second.x_star_extrapolated,
        diagnostics=second.diagnostics,
        stage_boundary=(x_m, y_m),
        stop_reason=second.stop_reason,
        extrapolation_model=second.extrapolation_model,
        spec=spec,
        h=h,
        growth_index=1,
        problem_name=p.name,
        stages=(stage1, ps2),
    )


def naive_failure_demo(
    p: Problem,
    method: str = "rk4",
    h: float = 0.01,
    x_end: float | None = None,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """Integrate the untransformed equation directly in x.

    Past a blow-up point the discrete solution keeps growing until it
    overflows, so the run halts with ``NonFinite``; ``halt_tau`` is the x
    where that happened.

    Args:
        x_end: Where to stop a run that never overflows; default ``x0 + 100``.
    """
    F = p.first_order_field()
    end = p.x0 + 100.0 if x_end is None else x_end
    return integrate(lambda s, x: F(x, s), p.initial, p.x0, h, method=method,
                     tau_end=end, max_steps=max_steps)


def write_csv(ps: ParametricSolution, path: str | Path) -> None:
    """Write a parametric solution as CSV: xi, x, states..., lambda_m."""
    header, data = ps.to_rows()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])
