"""Regularizing transformations of blow-up problems.

Every method turns the problem ``dY/dx = F(x, Y)`` into an autonomous (or
explicitly parametrized) system in a new independent variable that runs to
infinity as x approaches the blow-up point:

* gauge methods introduce ``dξ/dx = g``, so ``dx/dξ = 1/g`` and
  ``dY/dξ = F/g``. Hodograph, arc-length, 1+|f|, exp-type, growth-component,
  user non-local and differential-constraint gauges all fall here;
* the differential method uses ``t = y'`` itself as the parameter;
* the modified differential method sets ``t = t0 e^{λτ}``.

Exp-type gauges ``g = F_j / Y_j`` make slot j exactly exponential,
``Y_j = Y_j0 e^ξ``. By default that slot is filled in closed form instead
of being integrated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .expr import compile_partials, parse
from .problems import Kind, Problem
from .stepper import GuardTripped, HaltReason, Trajectory, VectorField, integrate

__all__ = [
    "Method",
    "TransformSpec",
    "TransformedProblem",
    "ParametricSolution",
    "TransformError",
    "LayoutError",
    "RangeError",
    "DENOMINATOR_TOL",
    "build",
    "decode",
    "reconstruct_on_x",
    "auto_growth_index",
]

DENOMINATOR_TOL = 1e-14


class TransformError(ValueError):
    """The method cannot be applied to the problem as given."""


class LayoutError(ValueError):
    """A trajectory does not match the transformed problem's state layout."""


class RangeError(ValueError):
    """Requested abscissae fall outside the computed solution."""


class Method(str, Enum):
    DIFFERENTIAL = "differential"
    MODIFIED_DIFFERENTIAL = "modified-differential"
    NONLOCAL = "nonlocal"
    CONSTRAINT = "constraint"
    HODOGRAPH = "hodograph"
    ARC_LENGTH = "arc-length"
    ONE_PLUS_ABS = "one-plus-abs"
    EXP_F_OVER_Y = "exp-f-over-y"
    EXP_T_OVER_Y = "exp-t-over-y"
    EXP_F_OVER_T = "exp-f-over-t"
    EXP_W_OVER_T = "exp-w-over-t"
    EXP_F_OVER_W = "exp-f-over-w"
    GROWTH = "growth"

    @classmethod
    def parse(cls, text: str) -> "Method":
        key = text.replace("-", "").replace("_", "").lower()
        for m in cls:
            if key == m.value.replace("-", ""):
                return m
        aliases = {
            "differentialconstraint": cls.CONSTRAINT,
            "exptypefovery": cls.EXP_F_OVER_Y,
            "exptypetovery": cls.EXP_T_OVER_Y,
            "exptypefovert": cls.EXP_F_OVER_T,
            "exptypewovert": cls.EXP_W_OVER_T,
            "exptypefoverw": cls.EXP_F_OVER_W,
            "systemgrowthcomponent": cls.GROWTH,
            "growthauto": cls.GROWTH,
            "arc": cls.ARC_LENGTH,
        }
        if key in aliases:
            return aliases[key]
        raise TransformError(f"unknown method {text!r}")


# exp-type methods: (slot index j, required scalar order or None for >= 2)
_EXP_SLOTS: dict[Method, tuple[int, int | None]] = {
    Method.EXP_F_OVER_Y: (0, 1),
    Method.EXP_T_OVER_Y: (0, None),
    Method.EXP_F_OVER_T: (1, 2),
    Method.EXP_W_OVER_T: (1, 3),
    Method.EXP_F_OVER_W: (2, 3),
}


@dataclass(frozen=True)
class TransformSpec:
    """Choice of transformation and its parameters.

    Attributes:
        method: Transformation family.
        g: Gauge expression for ``nonlocal`` and ``constraint``. It may use
            x, the state names, ``f`` (or ``f1..fn`` for systems) for the
            rhs value, and ``xi`` (constraints only).
        lam: λ > 0 of the modified differential method.
        s: Exponent of the arc-length family (default 2, or 1 for 1+|f|).
        c: Coefficients (c0, c1, ..., cn) of the arc-length family
            ``c_outer + (c0 + Σ c_m |F_m|^s)^(1/s)``; default all ones.
        c_outer: Additive constant outside the root.
        xi0: Initial value of ξ for differential constraints.
        k: 1-based growth component for systems; "auto" selects it.
        closed_form: Fill the exponential slot (or t for the modified
            differential method) analytically rather than integrating it.
        shift: Offset added to the exponential slot; None shifts it to 1
            automatically when its initial value is not positive.
    """

    method: Method
    g: str | None = None
    lam: float = 1.0
    s: float | None = None
    c: tuple[float, ...] | None = None
    c_outer: float = 0.0
    xi0: float = 0.0
    k: int | str | None = None
    closed_form: bool = True
    shift: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.method, Method):
            object.__setattr__(self, "method", Method.parse(str(self.method)))
        if self.c is not None:
            object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        if self.method is Method.MODIFIED_DIFFERENTIAL and not self.lam > 0:
            raise TransformError("lambda must be positive")
        if self.method in (Method.ARC_LENGTH, Method.ONE_PLUS_ABS):
            if self.s is not None and not self.s > 0:
                raise TransformError("s must be positive")
            coeffs = (self.c_outer, *(self.c or ()))
            if any(v < 0 for v in coeffs):
                raise TransformError("arc-length coefficients must be non-negative")
            if self.c is not None and not any(v > 0 for v in coeffs):
                raise TransformError("at least one arc-length coefficient must be positive")
        if self.method in (Method.NONLOCAL, Method.CONSTRAINT) and not self.g:
            raise TransformError(f"{self.method.value} needs a gauge expression g")
        if isinstance(self.k, str) and self.k != "auto":
            raise TransformError("k must be a 1-based index or 'auto'")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"method": self.method.value}
        if self.g is not None:
            out["g"] = self.g
        if self.method is Method.MODIFIED_DIFFERENTIAL:
            out["lambda"] = self.lam
        if self.s is not None:
            out["s"] = self.s
        if self.c is not None:
            out["c"] = list(self.c)
        if self.c_outer:
            out["c_outer"] = self.c_outer
        if self.method is Method.CONSTRAINT:
            out["xi0"] = self.xi0
        if self.k is not None:
            out["k"] = self.k
        if not self.closed_form:
            out["closed_form"] = False
        if self.shift is not None:
            out["shift"] = self.shift
        return out

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "TransformSpec":
        known = {"method", "g", "lambda", "s", "c", "c_outer", "xi0", "k", "closed_form", "shift"}
        unknown = set(doc) - known
        if unknown:
            raise TransformError(f"unknown transform fields {sorted(unknown)}")
        return cls(
            method=Method.parse(doc["method"]),
            g=doc.get("g"),
            lam=float(doc.get("lambda", 1.0)),
            s=doc.get("s"),
            c=tuple(doc["c"]) if doc.get("c") is not None else None,
            c_outer=float(doc.get("c_outer", 0.0)),
            xi0=float(doc.get("xi0", 0.0)),
            k=doc.get("k"),
            closed_form=bool(doc.get("closed_form", True)),
            shift=doc.get("shift"),
        )


@dataclass(frozen=True)
class _Inserted:
    """A state column computed from the parameter rather than integrated."""

    position: int  # index in the full column list [x, Y...]
    value: Callable[[float], float]
    deriv: Callable[[float], float]
    value_array: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TransformedProblem:
    """A regular system ready for a fixed-step integrator.

    Attributes:
        field: Vector field in the new independent variable.
        state0: Initial integrated state.
        tau0: Initial value of the independent variable.
        layout: Names of the integrated state slots.
        columns: Names of the decoded columns, ``x`` then the problem state.
        param_name: Name of the independent variable ("xi", "t" or "tau").
        growth_index: 0-based state slot used by the Λ stopping rule.
        problem: Source problem.
        spec: Transformation used.
        shift: Offset applied to the exponential slot, if any.
    """

    field: VectorField
    state0: tuple[float, ...]
    tau0: float
    layout: tuple[str, ...]
    columns: tuple[str, ...]
    param_name: str
    growth_index: int
    problem: Problem
    spec: TransformSpec
    inserted: tuple[_Inserted, ...] = ()
    extras: Mapping[str, Callable[[np.ndarray], np.ndarray]] = field(default_factory=dict)
    shift: float = 0.0

    def full_state(self, s: Sequence[float], tau: float) -> list[float]:
        """Columns ``[x, Y...]`` at one node."""
        out = list(s)
        for ins in self.inserted:
            out.insert(ins.position, ins.value(tau))
        return out

    def full_derivative(self, s: Sequence[float], tau: float, ds: Sequence[float]) -> list[float]:
        """d/dτ of the columns ``[x, Y...]`` given the field value ``ds``."""
        out = list(ds)
        for ins in self.inserted:
            out.insert(ins.position, ins.deriv(tau))
        return out

    def expand(self, states: np.ndarray, taus: np.ndarray) -> np.ndarray:
        """Full column matrix for a block of integrated states."""
        cols = [states[:, i] for i in range(states.shape[1])]
        for ins in self.inserted:
            cols.insert(ins.position, ins.value_array(taus))
        return np.column_stack(cols)

    def lambda_m(self, s: Sequence[float], tau: float, ds: Sequence[float]) -> float:
        """Stopping quantity ``min(|y_k|, |y_k'/y_k|)``, y' by the chain rule."""
        k = self.growth_index + 1
        full = self.full_state(s, tau)
        d = self.full_derivative(s, tau, ds)
        yk = full[k]
        if yk == 0.0:
            return 0.0
        slope = d[k] / d[0]
        return min(abs(yk), abs(slope / yk))

    def slope(self, s: Sequence[float], tau: float, ds: Sequence[float]) -> list[float]:
        """dY/dx at a node, reconstructed as (dY/dτ)/(dx/dτ)."""
        d = self.full_derivative(s, tau, ds)
        return [v / d[0] for v in d[1:]]


@dataclass(frozen=True)
class ParametricSolution:
    """Solution on the parameter grid.

    Attributes:
        xi: Parameter grid (ξ, t or τ depending on the method).
        x: Abscissae at the nodes.
        states: Problem state at the nodes, one column per ``state_names``.
        state_names: Column names, ``y, t, w`` or ``y1..yn``.
        lambda_m: Λ stopping quantity at the nodes.
        x_star_estimate: Last x value.
        halt_reason: Integrator halt reason.
        param_name: Name of the parameter.
        growth_index: 0-based column used for Λ.
        extras: Derived columns, e.g. ``t = y'`` for first-order runs of the
            differential methods.
    """

    xi: np.ndarray
    x: np.ndarray
    states: np.ndarray
    state_names: tuple[str, ...]
    lambda_m: np.ndarray
    x_star_estimate: float
    halt_reason: HaltReason
    param_name: str = "xi"
    growth_index: int = 0
    extras: Mapping[str, np.ndarray] = field(default_factory=dict)

    def column(self, name: str | int) -> np.ndarray:
        """A state column by name or 1-based index."""
        if isinstance(name, int):
            return self.states[:, name - 1]
        if name in self.state_names:
            return self.states[:, self.state_names.index(name)]
        if name in self.extras:
            return self.extras[name]
        if name == "x":
            return self.x
        raise KeyError(name)

    @property
    def y(self) -> np.ndarray:
        """y for scalar problems; the full component matrix for systems."""
        if self.state_names[0] == "y":
            return self.states[:, 0]
        return self.states

    @property
    def y_growth(self) -> np.ndarray:
        return self.states[:, self.growth_index]

    @property
    def t(self) -> np.ndarray | None:
        if "t" in self.state_names or "t" in self.extras:
            return self.column("t")
        return None

    @property
    def w(self) -> np.ndarray | None:
        return self.column("w") if "w" in self.state_names else None

    def __len__(self) -> int:
        return len(self.xi)

    def to_rows(self) -> tuple[list[str], np.ndarray]:
        """Header and data for CSV export: xi, x, states..., extras..., lambda_m."""
        extra_names = [n for n in self.extras if n not in self.state_names]
        header = ["xi" if self.param_name == "xi" else self.param_name, "x", *self.state_names]
        header += extra_names + ["lambda_m"]
        cols = [self.xi, self.x, *self.states.T, *(self.extras[n] for n in extra_names), self.lambda_m]
        return header, np.column_stack(cols)


# ------------------------------------------------------------------ build


def _scalar_rhs_names(p: Problem) -> tuple[str, ...]:
    return ("f",) if p.is_scalar else tuple(f"f{m}" for m in range(1, p.order + 1))


def _compile_gauge(p: Problem, spec: TransformSpec) -> Callable[..., float]:
    allowed = p.variables + _scalar_rhs_names(p)
    if spec.method is Method.CONSTRAINT:
        allowed = allowed + ("xi",)
    g = parse(spec.g or "", p.params)
    bad = [v for v in g.free_vars if v not in allowed]
    if bad:
        hint = " (xi is only available to the constraint method)" if "xi" in bad else ""
        raise TransformError(f"gauge uses unknown names {bad}{hint}; allowed: {list(allowed)}")
    return g.compile(p.variables + _scalar_rhs_names(p) + ("xi",), p.params)


def _derivative_slot_indices(p: Problem) -> list[int]:
    """Slots whose x-derivative appears in the arc-length family (all of F)."""
    return list(range(p.order))


def _arc_gauge(p: Problem, spec: TransformSpec) -> Callable[[float, list, list, float], float]:
    n = p.order
    s = spec.s if spec.s is not None else (1.0 if spec.method is Method.ONE_PLUS_ABS else 2.0)
    c = spec.c if spec.c is not None else (1.0,) * (n + 1)
    if len(c) != n + 1:
        raise TransformError(f"c needs {n + 1} coefficients (c0 and one per derivative slot)")
    c0, cm = c[0], c[1:]
    outer = spec.c_outer
    if s == 2.0:
        def gauge(x, Y, F, xi):
            acc = c0
            for cc, v in zip(cm, F):
                acc += cc * v * v
            return outer + math.sqrt(acc)
    elif s == 1.0:
        def gauge(x, Y, F, xi):
            acc = c0
            for cc, v in zip(cm, F):
                acc += cc * abs(v)
            return outer + acc
    else:
        inv = 1.0 / s

        def gauge(x, Y, F, xi):
            acc = c0
            for cc, v in zip(cm, F):
                acc += cc * abs(v) ** s
            return outer + acc**inv
    return gauge


def auto_growth_index(p: Problem) -> int:
    """0-based index of the fastest-growing component of a system.

    Uses the dominant-balance exponents when every rhs is polynomial;
    otherwise runs 50 naive RK4 steps and picks the component with the
    largest signed ratio f_k/y_k at the end.
    """
    if p.is_scalar:
        return 0
    from .estimates import ExponentError, exponent_solve

    try:
        return exponent_solve(p).growing_index - 1
    except ExponentError:
        pass
    F = p.first_order_field()
    traj = integrate(lambda s, tau: F(tau, s), p.initial, p.x0, 2e-3, n_steps=50)
    Y = list(traj.states[-1])
    vals = F(float(traj.grid[-1]), Y)
    ratios = [v / y if y != 0 and math.isfinite(v) else -math.inf for v, y in zip(vals, Y)]
    return int(np.argmax(ratios))


def _growth_index(p: Problem, spec: TransformSpec) -> int:
    if p.is_scalar:
        return 0
    if spec.k is None or spec.k == "auto":
        return auto_growth_index(p)
    k = int(spec.k)
    if not 1 <= k <= p.order:
        raise TransformError(f"k must be between 1 and {p.order}")
    return k - 1


def build(p: Problem, spec: TransformSpec) -> TransformedProblem:
    """Construct the regularized system for ``p`` under ``spec``.

    Raises:
        TransformError: the method does not apply to the problem kind, the
            gauge is not positive at the initial point, or parameters are
            invalid.
    """
    m = spec.method
    if m is Method.DIFFERENTIAL or m is Method.MODIFIED_DIFFERENTIAL:
        return _build_differential(p, spec)
    return _build_gauge(p, spec)


def _build_gauge(p: Problem, spec: TransformSpec) -> TransformedProblem:
    m = spec.method
    n = p.order
    F = p.first_order_field()
    names = p.state_names
    gidx = _growth_index(p, spec)
    slot: int | None = None

    if m in _EXP_SLOTS:
        if not p.is_scalar:
            raise TransformError(f"{m.value} applies to scalar equations; use growth for systems")
        slot, need = _EXP_SLOTS[m]
        if need is not None and n != need:
            raise TransformError(f"{m.value} needs a scalar equation of order {need}, got {n}")
        if need is None and n < 2:
            raise TransformError(f"{m.value} needs an equation of order 2 or higher")
    elif m is Method.GROWTH:
        slot = gidx
    if slot is not None:
        y_init = p.initial[slot]
        shift = spec.shift if spec.shift is not None else (0.0 if y_init > 0 else 1.0 - y_init)
        base = y_init + shift
        if not base > 0:
            raise TransformError("exponential slot must start positive after the shift")
        j = slot

        def gauge(x, Y, Fv, xi):
            return Fv[j] / (Y[j] + shift)

    elif m is Method.HODOGRAPH:
        j0 = gidx

        def gauge(x, Y, Fv, xi):
            return Fv[j0]

    elif m in (Method.ARC_LENGTH, Method.ONE_PLUS_ABS):
        gauge = _arc_gauge(p, spec)
    elif m in (Method.NONLOCAL, Method.CONSTRAINT):
        gfun = _compile_gauge(p, spec)
        if p.is_scalar:
            # F = (t, w, ..., f): only the last entry is new
            def gauge(x, Y, Fv, xi):
                return gfun(x, *Y, Fv[-1], xi)
        else:
            def gauge(x, Y, Fv, xi):
                return gfun(x, *Y, *Fv, xi)

    else:  # pragma: no cover - enum exhausted
        raise TransformError(f"unsupported method {m}")

    tau0 = spec.xi0 if m is Method.CONSTRAINT else 0.0
    x0 = p.x0
    Y0 = list(p.initial)
    g0 = gauge(x0, Y0, F(x0, Y0), tau0)
    if not (math.isfinite(g0) and g0 > 0):
        raise TransformError(f"gauge g = {g0!r} at the initial point; it must be positive")

    tol = DENOMINATOR_TOL
    if slot is not None and spec.closed_form:
        j = slot
        c0 = p.initial[j] + shift
        sh = shift
        keep = [i for i in range(n) if i != j]

        def ev(s, xi):
            Y = list(s[1:])
            yj = c0 * math.exp(xi) - sh
            Y.insert(j, yj)
            Fv = F(s[0], Y)
            g = Fv[j] / (yj + sh)
            if abs(g) < tol:
                raise GuardTripped(f"|g| = {abs(g):.3e} below {tol:g} at x = {s[0]!r}")
            inv = 1.0 / g
            return [inv] + [Fv[i] * inv for i in keep]

        inserted = (
            _Inserted(
                j + 1,
                lambda xi: c0 * math.exp(xi) - sh,
                lambda xi: c0 * math.exp(xi),
                lambda xis: c0 * np.exp(xis) - sh,
            ),
        )
        layout = ("x",) + tuple(names[i] for i in keep)
        state0 = (x0, *[Y0[i] for i in keep])
    else:

        def ev(s, xi):
            Y = s[1:]
            Fv = F(s[0], Y)
            g = gauge(s[0], Y, Fv, xi)
            if abs(g) < tol:
                raise GuardTripped(f"|g| = {abs(g):.3e} below {tol:g} at x = {s[0]!r}")
            inv = 1.0 / g
            return [inv] + [v * inv for v in Fv]

        inserted = ()
        layout = ("x",) + names
        state0 = (x0, *Y0)
    return TransformedProblem(
        field=VectorField(len(layout), ev),
        state0=tuple(float(v) for v in state0),
        tau0=float(tau0),
        layout=layout,
        columns=("x",) + names,
        param_name="xi",
        growth_index=gidx,
        problem=p,
        spec=spec,
        inserted=inserted,
        shift=shift if slot is not None else 0.0,
    )


def _build_differential(p: Problem, spec: TransformSpec) -> TransformedProblem:
    modified = spec.method is Method.MODIFIED_DIFFERENTIAL
    lam = spec.lam
    tol = DENOMINATOR_TOL
    x0 = p.x0
    if p.kind is Kind.FIRST:
        fpart = compile_partials(p.rhs[0], ("x", "y"), ("x", "y"), p.params)
        t0, (fx, fy) = fpart(x0, p.initial[0])
        D0 = fx + t0 * fy
        if not (math.isfinite(D0) and D0 > 0):
            raise TransformError(f"f_x + t f_y = {D0!r} at the initial point; it must be positive")
        if modified and not t0 > 0:
            raise TransformError("modified differential method needs t0 = f(x0, y0) > 0")

        def denom(x, y, t):
            _, (fx, fy) = fpart(x, y)
            D = fx + t * fy
            if abs(D) < tol:
                raise GuardTripped(f"|f_x + t f_y| = {abs(D):.3e} below {tol:g} at x = {x!r}")
            return D

        state_y = (p.initial[0],)
        columns = ("x", "y")
    elif p.kind is Kind.SECOND:
        f = p.compiled_rhs()[0]
        t0 = p.initial[1]
        D0 = f(x0, p.initial[0], t0)
        if not (math.isfinite(D0) and D0 > 0):
            raise TransformError(f"f = {D0!r} at the initial point; it must be positive")
        if modified and not t0 > 0:
            raise TransformError("modified differential method needs y'(x0) > 0")

        def denom(x, y, t):
            D = f(x, y, t)
            if abs(D) < tol:
                raise GuardTripped(f"|f| = {abs(D):.3e} below {tol:g} at x = {x!r}")
            return D

        state_y = (p.initial[0],)
        columns = ("x", "y", "t")
    else:
        raise TransformError("differential methods apply to first- and second-order equations")

    first = p.kind is Kind.FIRST
    extras: dict[str, Callable[[np.ndarray], np.ndarray]] = {}
    if not modified:

        def ev(s, t):
            D = denom(s[0], s[1], t)
            return [1.0 / D, t / D]

        state0 = (x0, *state_y)
        layout = ("x", "y")
        tau0 = t0
        param = "t"
        if first:
            extras["t"] = lambda taus: np.asarray(taus, dtype=float)
            inserted = ()
        else:
            inserted = (_Inserted(2, lambda t: t, lambda t: 1.0, lambda ts: np.asarray(ts, float)),)
    elif spec.closed_form:

        def ev(s, tau):
            t = t0 * math.exp(lam * tau)
            D = denom(s[0], s[1], t)
            r = lam * t / D
            return [r, r * t]

        state0 = (x0, *state_y)
        layout = ("x", "y")
        tau0 = 0.0
        param = "tau"
        tv = (
            lambda tau: t0 * math.exp(lam * tau),
            lambda tau: lam * t0 * math.exp(lam * tau),
            lambda taus: t0 * np.exp(lam * np.asarray(taus, float)),
        )
        if first:
            extras["t"] = tv[2]
            inserted = ()
        else:
            inserted = (_Inserted(2, *tv),)
    else:

        def ev(s, tau):
            t = s[2]
            D = denom(s[0], s[1], t)
            r = lam * t / D
            return [r, r * t, lam * t]

        state0 = (x0, *state_y, t0)
        layout = ("x", "y", "t")
        tau0 = 0.0
        param = "tau"
        inserted = ()
        if first:
            # t is integrated but is not a problem-state column
            layout = ("x", "y", "_t")
    return TransformedProblem(
        field=VectorField(len(layout), ev),
        state0=tuple(float(v) for v in state0),
        tau0=float(tau0),
        layout=layout,
        columns=columns,
        param_name=param,
        growth_index=0,
        problem=p,
        spec=spec,
        inserted=inserted,
        extras=extras,
    )


# ----------------------------------------------------------------- decode


def decode(
    tp: TransformedProblem, traj: Trajectory, lambda_m: Sequence[float] | None = None
) -> ParametricSolution:
    """Turn a trajectory of ``tp.field`` into a parametric solution.

    Args:
        tp: The transformed problem that was integrated.
        traj: Trajectory started from ``tp.state0``.
        lambda_m: Λ values at the nodes if already known; recomputed
            otherwise.

    Raises:
        LayoutError: the trajectory's state dimension does not match.
    """
    states = np.asarray(traj.states, dtype=float)
    if states.ndim != 2 or states.shape[1] != len(tp.layout):
        raise LayoutError(
            f"trajectory has {states.shape[-1] if states.ndim == 2 else '?'} columns, "
            f"layout {tp.layout} needs {len(tp.layout)}"
        )
    full = tp.expand(states, traj.grid)
    extras = {name: fn(traj.grid) for name, fn in tp.extras.items()}
    ncols = len(tp.columns)
    if "_t" in tp.layout:
        extras["t"] = states[:, tp.layout.index("_t")]
        full = full[:, :ncols]
    if lambda_m is None:
        lam = np.empty(len(states))
        for i, row in enumerate(states):
            tau = float(traj.grid[i])
            lam[i] = tp.lambda_m(row.tolist(), tau, tp.field.eval(row.tolist(), tau))
    else:
        lam = np.asarray(lambda_m, dtype=float)
        if len(lam) != len(states):
            raise LayoutError("lambda_m length does not match the trajectory")
    return ParametricSolution(
        xi=np.asarray(traj.grid, dtype=float),
        x=full[:, 0].copy(),
        states=full[:, 1:ncols].copy(),
        state_names=tp.columns[1:],
        lambda_m=lam,
        x_star_estimate=float(full[-1, 0]),
        halt_reason=traj.halt_reason,
        param_name=tp.param_name,
        growth_index=tp.growth_index,
        extras=extras,
    )


def reconstruct_on_x(
    ps: ParametricSolution, xs: Sequence[float] | float, component: str | int | None = None
) -> np.ndarray:
    """Values of a solution column at given abscissae.

    Uses monotone piecewise-cubic (PCHIP) interpolation in x.

    Args:
        ps: Parametric solution with strictly increasing x.
        xs: Abscissae inside ``[min x, max x]``.
        component: Column name or 1-based index; default y (scalar) or the
            growth component (system).

    Raises:
        RangeError: some abscissa lies outside the solution, or x is not
            strictly increasing.
    """
    xs_arr = np.atleast_1d(np.asarray(xs, dtype=float))
    x = ps.x
    if len(x) < 2 or np.any(np.diff(x) <= 0):
        raise RangeError("x must be strictly increasing along the solution")
    lo, hi = x[0], x[-1]
    if np.any(xs_arr < lo) or np.any(xs_arr > hi):
        raise RangeError(f"requested x outside the solution range [{lo}, {hi}]")
    if component is None:
        col = ps.states[:, 0] if ps.state_names[0] == "y" else ps.y_growth
    else:
        col = ps.column(component)
    out = PchipInterpolator(x, col)(xs_arr)
    return out if np.ndim(xs) else out[0]


def with_spec(spec: TransformSpec, **changes: Any) -> TransformSpec:
    return replace(spec, **changes)
