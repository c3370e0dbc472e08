"""Cauchy problems, their exact solutions, and the built-in registry."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .expr import Expr, parse

__all__ = [
    "Kind",
    "Problem",
    "Singularity",
    "ExactSolution",
    "RegistryEntry",
    "REGISTRY",
    "ProblemError",
    "DomainError",
    "registry_get",
    "exact_eval",
    "reduce_to_system",
    "problem_from_dict",
    "load_problem",
    "state_names_for",
    "make_problem",
]


class ProblemError(ValueError):
    """Invalid problem definition or parameter values."""


class DomainError(ValueError):
    """Evaluation requested outside the domain of existence."""


class Kind(str, Enum):
    FIRST = "FirstOrder"
    SECOND = "SecondOrder"
    NTH = "NthOrder"
    SYSTEM = "System"

    @classmethod
    def parse(cls, text: str) -> "Kind":
        key = text.replace("-", "").replace("_", "").lower()
        aliases = {
            "firstorder": cls.FIRST,
            "first": cls.FIRST,
            "secondorder": cls.SECOND,
            "second": cls.SECOND,
            "nthorder": cls.NTH,
            "nth": cls.NTH,
            "system": cls.SYSTEM,
        }
        if key not in aliases:
            raise ProblemError(f"unknown problem kind {text!r}")
        return aliases[key]


def state_names_for(kind: Kind, n: int) -> tuple[str, ...]:
    """Names of the state slots: y, t (= y'), w (= y''), d3, ... or y1..yn."""
    if kind is Kind.SYSTEM:
        return tuple(f"y{m}" for m in range(1, n + 1))
    base = ("y", "t", "w")
    return tuple(base[k] if k < 3 else f"d{k}" for k in range(n))


@dataclass(frozen=True)
class Problem:
    """A Cauchy problem written over named variables.

    Scalar problems of order n use ``x`` and the slots ``y, t, w, d3, ...``
    for y and its derivatives; the single rhs gives the n-th derivative.
    Systems use ``x, y1..yn`` and carry one rhs per component.

    Attributes:
        kind: Problem kind.
        rhs: Right-hand side expressions.
        x0: Initial abscissa.
        initial: Initial state in slot order.
        params: Parameter values bound into ``rhs``.
        name: Registry key or a user label.
    """

    kind: Kind
    rhs: tuple[Expr, ...]
    x0: float
    initial: tuple[float, ...]
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self) -> None:
        n = self.order
        expected = 1 if self.kind is Kind.FIRST else (2 if self.kind is Kind.SECOND else n)
        if len(self.initial) != expected:
            raise ProblemError(
                f"{self.kind.value} needs {expected} initial values, got {len(self.initial)}"
            )
        if self.kind is Kind.SYSTEM and len(self.rhs) != n:
            raise ProblemError("system needs one rhs per component")
        if self.kind is not Kind.SYSTEM and len(self.rhs) != 1:
            raise ProblemError("scalar problems take exactly one rhs")
        allowed = set(self.variables)
        for e in self.rhs:
            extra = [v for v in e.names if v not in allowed and v not in self.params]
            if extra:
                raise ProblemError(
                    f"rhs {e.source!r} uses {extra}; allowed variables are {sorted(allowed)}"
                )
        if not all(math.isfinite(v) for v in (self.x0, *self.initial)):
            raise ProblemError("initial data must be finite")

    @property
    def order(self) -> int:
        """Dimension of the first-order state (n)."""
        if self.kind is Kind.SYSTEM:
            return len(self.rhs)
        if self.kind is Kind.FIRST:
            return 1
        if self.kind is Kind.SECOND:
            return 2
        return len(self.initial)

    @property
    def is_scalar(self) -> bool:
        return self.kind is not Kind.SYSTEM

    @property
    def state_names(self) -> tuple[str, ...]:
        return state_names_for(self.kind, self.order)

    @property
    def variables(self) -> tuple[str, ...]:
        return ("x",) + self.state_names

    def compiled_rhs(self) -> list[Callable[..., float]]:
        """Rhs functions taking positional ``(x, *state)``."""
        return [e.compile(self.variables, self.params) for e in self.rhs]

    def first_order_field(self) -> Callable[[float, Sequence[float]], list[float]]:
        """Return ``F(x, Y)`` with ``dY/dx = F``."""
        fns = self.compiled_rhs()
        if self.kind is Kind.SYSTEM:
            return lambda x, Y: [f(x, *Y) for f in fns]
        f = fns[0]
        return lambda x, Y: [*Y[1:], f(x, *Y)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "rhs": [e.source for e in self.rhs],
            "x0": self.x0,
            "initial": list(self.initial),
            "params": dict(self.params),
            "name": self.name,
        }

    def with_initial(self, x0: float, initial: Sequence[float]) -> "Problem":
        return Problem(self.kind, self.rhs, float(x0), tuple(map(float, initial)), self.params, self.name)


def make_problem(
    kind: Kind,
    rhs: Sequence[str],
    x0: float,
    initial: Sequence[float],
    params: Mapping[str, float] | None = None,
    name: str = "",
) -> Problem:
    params = {k: float(v) for k, v in (params or {}).items()}
    exprs = tuple(parse(src, params) for src in rhs)
    return Problem(kind, exprs, float(x0), tuple(float(v) for v in initial), params, name)


@dataclass(frozen=True)
class Singularity:
    """Kind of the endpoint singularity: "pole" (with beta), "log" or "none"."""

    kind: str
    beta: float | None = None

    def __str__(self) -> str:
        if self.kind == "pole":
            return f"Pole(beta={self.beta:g})"
        return {"log": "Logarithmic", "none": "None"}[self.kind]


@dataclass(frozen=True)
class ExactSolution:
    """Exact solution data.

    Attributes:
        state: Expressions in ``x`` for every state slot (y, y', ... or
            y1..yn), or None when no closed form is known.
        x_star: Blow-up point, None if unknown or if there is no blow-up.
        singularity: Character of the singularity at ``x_star``.
        params: Parameter values bound into ``state``.
        blows_up: False when the solution is known to stay bounded.
    """

    state: tuple[Expr, ...] | None
    x_star: float | None
    singularity: Singularity
    params: Mapping[str, float] = field(default_factory=dict)
    blows_up: bool = True

    @property
    def y_of_x(self) -> Expr | tuple[Expr, ...] | None:
        if self.state is None:
            return None
        return self.state[0] if len(self.state) == 1 else self.state

    def compiled(self) -> list[Callable[[float], float]]:
        if self.state is None:
            raise DomainError("no closed-form solution available")
        return [e.compile(("x",), self.params) for e in self.state]


def exact_eval(sol: ExactSolution, x: float) -> np.ndarray:
    """Exact state at ``x``.

    Raises:
        DomainError: ``x`` at or past the blow-up point, or no closed form.
    """
    if sol.x_star is not None and x >= sol.x_star:
        raise DomainError(f"x={x} is outside the domain of existence x < {sol.x_star}")
    return np.array([f(float(x)) for f in sol.compiled()])


def reduce_to_system(p: Problem) -> Problem:
    """Rewrite an order-n scalar problem as the chain y1' = y2, ..., yn' = f."""
    if p.kind is Kind.FIRST or p.kind is Kind.SYSTEM:
        return p
    n = p.order
    names = state_names_for(p.kind, n)
    rename = {old: f"y{k + 1}" for k, old in enumerate(names)}
    last = _rename(p.rhs[0], rename, p.params)
    chain = [parse(f"y{k + 2}", p.params) for k in range(n - 1)]
    return Problem(Kind.SYSTEM, tuple(chain) + (last,), p.x0, p.initial, p.params, p.name)


def _rename(e: Expr, rename: Mapping[str, str], params: Mapping[str, float]) -> Expr:
    from .expr import BinOp, Call, Neg, Var, unparse

    def walk(node):
        if isinstance(node, Var):
            return Var(rename.get(node.name, node.name))
        if isinstance(node, Neg):
            return Neg(walk(node.operand))
        if isinstance(node, BinOp):
            return BinOp(node.op, walk(node.left), walk(node.right))
        if isinstance(node, Call):
            return Call(node.func, walk(node.arg))
        return node

    return parse(unparse(walk(e.ast)), params)


# ---------------------------------------------------------------- registry


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ProblemError(message)


@dataclass(frozen=True)
class RegistryEntry:
    """Recipe for a named test problem; everything is recomputed from params."""

    name: str
    kind: Kind
    rhs: tuple[str, ...]
    defaults: Mapping[str, float]
    initial: Callable[[Mapping[str, float]], list[float]]
    exact: Callable[[Mapping[str, float]], list[str]] | None
    x_star: Callable[[Mapping[str, float]], float | None]
    singularity: Callable[[Mapping[str, float]], Singularity]
    validate: Callable[[Mapping[str, float]], None] = lambda p: None
    description: str = ""
    minorant: str | None = None
    x0: float = 0.0

    def build(self, overrides: Mapping[str, float] | None = None) -> tuple[Problem, ExactSolution]:
        unknown = set(overrides or {}) - set(self.defaults)
        if unknown:
            raise ProblemError(f"{self.name} has no parameter(s) {sorted(unknown)}")
        params = {k: float(v) for k, v in {**self.defaults, **(overrides or {})}.items()}
        self.validate(params)
        problem = make_problem(self.kind, self.rhs, self.x0, self.initial(params), params, self.name)
        state = None
        if self.exact is not None:
            state = tuple(parse(src, params) for src in self.exact(params))
        x_star = self.x_star(params)
        sing = self.singularity(params)
        sol = ExactSolution(state, x_star, sing, params, blows_up=sing.kind != "none")
        return problem, sol


def _power_validate(p: Mapping[str, float]) -> None:
    _require(p["a"] > 0 and p["b"] > 0 and p["gamma"] > 1, "requires a > 0, b > 0, gamma > 1")


_POWER_Y = "(a^(1-gamma) - b*(gamma-1)*x)^(1/(1-gamma))"


def _zero_rhs_xstar(p: Mapping[str, float]) -> float | None:
    a, b = p["a"], p["b"]
    if b < math.sqrt(2.0 / a):
        return None
    return b - math.sqrt(max(b * b - 2.0 / a, 0.0))


def _zero_rhs_sing(p: Mapping[str, float]) -> Singularity:
    a, b = p["a"], p["b"]
    if b < math.sqrt(2.0 / a):
        return Singularity("none")
    return Singularity("pole", 2.0 if b * b == 2.0 / a else 1.0)


_ENTRIES = [
    RegistryEntry(
        name="power1",
        kind=Kind.FIRST,
        rhs=("b*y^gamma",),
        defaults={"a": 1.0, "b": 1.0, "gamma": 2.0},
        initial=lambda p: [p["a"]],
        exact=lambda p: [_POWER_Y],
        x_star=lambda p: 1.0 / (p["a"] ** (p["gamma"] - 1) * p["b"] * (p["gamma"] - 1)),
        singularity=lambda p: Singularity("pole", 1.0 / (p["gamma"] - 1)),
        validate=_power_validate,
        description="y' = b y^gamma, y(0) = a: power-type pole",
        minorant="b*y^gamma",
    ),
    RegistryEntry(
        name="exp1",
        kind=Kind.FIRST,
        rhs=("b*exp(y)",),
        defaults={"a": 0.0, "b": 1.0},
        initial=lambda p: [p["a"]],
        exact=lambda p: ["-ln(exp(-a) - b*x)"],
        x_star=lambda p: math.exp(-p["a"]) / p["b"],
        singularity=lambda p: Singularity("log"),
        validate=lambda p: _require(p["b"] > 0, "requires b > 0"),
        description="y' = b e^y, y(0) = a: logarithmic singularity",
        minorant="b*exp(y)",
    ),
    RegistryEntry(
        name="riccati-x2",
        kind=Kind.FIRST,
        rhs=("y^2 + x^m",),
        defaults={"a": 1.0, "m": 2.0},
        initial=lambda p: [p["a"]],
        exact=None,
        x_star=lambda p: None,
        singularity=lambda p: Singularity("pole", 1.0),
        validate=lambda p: _require(p["a"] > 0 and p["m"] > 0, "requires a > 0, m > 0"),
        description="y' = y^2 + x^m, y(0) = a: Riccati, no elementary solution",
        minorant="y^2",
    ),
    RegistryEntry(
        name="sing-pole1",
        kind=Kind.FIRST,
        rhs=("y^2/(b-x)",),
        defaults={"a": 1.0, "b": 1.0},
        initial=lambda p: [p["a"]],
        exact=lambda p: ["1/(ln(1 - x/b) + 1/a)"],
        x_star=lambda p: p["b"] * (1.0 - math.exp(-1.0 / p["a"])),
        singularity=lambda p: Singularity("pole", 1.0),
        validate=lambda p: _require(p["a"] > 0 and p["b"] > 0, "requires a > 0, b > 0"),
        description="y' = y^2/(b-x), y(0) = a: blow-up before the coefficient pole",
    ),
    RegistryEntry(
        name="sing-pole2",
        kind=Kind.FIRST,
        rhs=("y^2/(b-x)^2",),
        defaults={"a": 1.0, "b": 1.0},
        initial=lambda p: [p["a"]],
        exact=lambda p: ["a*b/(a+b)*(1 + a*b/(b^2 - (a+b)*x))"],
        x_star=lambda p: p["b"] ** 2 / (p["a"] + p["b"]),
        singularity=lambda p: Singularity("pole", 1.0),
        validate=lambda p: _require(p["a"] > 0 and p["b"] > 0, "requires a > 0, b > 0"),
        description="y' = y^2/(b-x)^2, y(0) = a: non-integrable coefficient singularity overtaken",
    ),
    RegistryEntry(
        name="zero-rhs",
        kind=Kind.FIRST,
        rhs=("y^2*(b-x)",),
        defaults={"a": 1.0, "b": 2.0},
        initial=lambda p: [p["a"]],
        exact=lambda p: ["a/(a*x^2/2 - a*b*x + 1)"],
        x_star=_zero_rhs_xstar,
        singularity=_zero_rhs_sing,
        validate=lambda p: _require(p["a"] > 0 and p["b"] > 0, "requires a > 0, b > 0"),
        description="y' = y^2 (b-x), y(0) = a: rhs changes sign at x = b",
    ),
    RegistryEntry(
        name="riccati-decreasing",
        kind=Kind.FIRST,
        rhs=("(2-x)*y^2",),
        defaults={},
        initial=lambda p: [1.0],
        exact=lambda p: ["2/(x^2 - 4*x + 2)"],
        x_star=lambda p: 2.0 - math.sqrt(2.0),
        singularity=lambda p: Singularity("pole", 1.0),
        description="y' = (2-x) y^2, y(0) = 1",
    ),
    RegistryEntry(
        name="abel",
        kind=Kind.FIRST,
        rhs=("y^3 + c*x^m",),
        defaults={"a": 1.0, "c": 1.0, "m": 2.0},
        initial=lambda p: [p["a"]],
        exact=None,
        x_star=lambda p: None,
        singularity=lambda p: Singularity("pole", 0.5),
        validate=lambda p: _require(
            p["a"] > 0 and p["c"] >= 0 and p["m"] > 0, "requires a > 0, c >= 0, m > 0"
        ),
        description="y' = y^3 + c x^m, y(0) = a: Abel equation of the first kind",
        minorant="y^3",
    ),
    RegistryEntry(
        name="system3",
        kind=Kind.SYSTEM,
        rhs=("-y1*y2", "y2^4*y3", "-2*y1"),
        defaults={},
        initial=lambda p: [1.0, 1.0, 1.0],
        exact=lambda p: ["1-x", "1/(1-x)", "(1-x)^2"],
        x_star=lambda p: 1.0,
        singularity=lambda p: Singularity("pole", 1.0),
        description="y1' = -y1 y2, y2' = y2^4 y3, y3' = -2 y1; only y2 blows up",
    ),
    RegistryEntry(
        name="ode2-power",
        kind=Kind.SECOND,
        rhs=("b^2*gamma*y^(2*gamma-1)",),
        defaults={"a": 1.0, "b": 1.0, "gamma": 2.0},
        initial=lambda p: [p["a"], p["a"] ** p["gamma"] * p["b"]],
        exact=lambda p: [_POWER_Y, f"b*({_POWER_Y})^gamma"],
        x_star=lambda p: 1.0 / (p["a"] ** (p["gamma"] - 1) * p["b"] * (p["gamma"] - 1)),
        singularity=lambda p: Singularity("pole", 1.0 / (p["gamma"] - 1)),
        validate=_power_validate,
        description="y'' = b^2 gamma y^(2 gamma - 1), y(0) = a, y'(0) = a^gamma b",
    ),
    RegistryEntry(
        name="ode2-chain",
        kind=Kind.SECOND,
        rhs=("b*gamma*y^(gamma-1)*t",),
        defaults={"a": 1.0, "b": 1.0, "gamma": 2.0},
        initial=lambda p: [p["a"], p["a"] ** p["gamma"] * p["b"]],
        exact=lambda p: [_POWER_Y, f"b*({_POWER_Y})^gamma"],
        x_star=lambda p: 1.0 / (p["a"] ** (p["gamma"] - 1) * p["b"] * (p["gamma"] - 1)),
        singularity=lambda p: Singularity("pole", 1.0 / (p["gamma"] - 1)),
        validate=_power_validate,
        description="y'' = b gamma y^(gamma-1) y': power1 differentiated once",
    ),
    RegistryEntry(
        name="ode2-exp",
        kind=Kind.SECOND,
        rhs=("exp(2*y)",),
        defaults={},
        initial=lambda p: [0.0, 1.0],
        exact=lambda p: ["-ln(1-x)", "1/(1-x)"],
        x_star=lambda p: 1.0,
        singularity=lambda p: Singularity("log"),
        description="y'' = e^(2y), y(0) = 0, y'(0) = 1: logarithmic singularity",
    ),
    RegistryEntry(
        name="ode3-power",
        kind=Kind.NTH,
        rhs=("6*y^4",),
        defaults={},
        initial=lambda p: [1.0, 1.0, 2.0],
        exact=lambda p: ["1/(1-x)", "1/(1-x)^2", "2/(1-x)^3"],
        x_star=lambda p: 1.0,
        singularity=lambda p: Singularity("pole", 1.0),
        description="y''' = 6 y^4, y(0) = 1, y'(0) = 1, y''(0) = 2",
    ),
]

REGISTRY: dict[str, RegistryEntry] = {e.name: e for e in _ENTRIES}


def registry_get(
    name: str, overrides: Mapping[str, float] | None = None
) -> tuple[Problem, ExactSolution]:
    """Instantiate a registry problem.

    Raises:
        ProblemError: unknown name, unknown parameter, or invalid values.
    """
    if name not in REGISTRY:
        raise ProblemError(f"unknown problem {name!r}; known: {', '.join(REGISTRY)}")
    return REGISTRY[name].build(overrides)


def problem_from_dict(doc: Mapping[str, Any]) -> tuple[Problem, ExactSolution | None]:
    """Build a problem from a JSON-style document.

    Keys: ``kind``, ``rhs`` (list of text), ``x0``, ``initial``, optional
    ``params``, ``name``, ``exact`` (state expressions in x) and ``x_star``.
    """
    try:
        kind = Kind.parse(str(doc["kind"]))
        rhs = doc["rhs"]
        if isinstance(rhs, str):
            rhs = [rhs]
        params = doc.get("params", {})
        problem = make_problem(
            kind, rhs, doc.get("x0", 0.0), doc["initial"], params, doc.get("name", "")
        )
    except KeyError as exc:
        raise ProblemError(f"problem document is missing {exc}") from None
    sol = None
    if "exact" in doc or "x_star" in doc:
        state = tuple(parse(s, problem.params) for s in doc["exact"]) if "exact" in doc else None
        x_star = doc.get("x_star")
        sol = ExactSolution(
            state,
            None if x_star is None else float(x_star),
            Singularity("pole", 1.0) if x_star is not None else Singularity("none"),
            problem.params,
            blows_up=x_star is not None,
        )
    return problem, sol


def load_problem(path: str | Path) -> tuple[Problem, ExactSolution | None]:
    with open(path, encoding="utf-8") as fh:
        return problem_from_dict(json.load(fh))
