"""Blow-up criteria, critical-value quadrature and brackets, exponents, 1/β.

Improper integrals ``∫_a^∞ dy / f(y)`` are computed in ``u = 1 - a/y`` over
dyadic segments ``y ∈ [a 2^k, a 2^(k+1)]`` with adaptive Simpson on each
segment. Once the segment ratio settles below one, the rest of the tail is
summed as a geometric series.
"""

from __future__ import annotations

import bisect
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Any, Callable, Sequence, Union

import numpy as np
from scipy.optimize import minimize_scalar

from .expr import BinOp, Call, Expr, Neg, Num, Var, compile_partials, parse
from .problems import Kind, Problem, reduce_to_system

__all__ = [
    "EstimateError",
    "DivergentIntegralError",
    "ExponentError",
    "TailTooShortError",
    "BoundsReport",
    "ExponentReport",
    "DiagnosticSeries",
    "AsymptoticFit",
    "FirstIntegral",
    "adaptive_simpson",
    "improper_integral",
    "criterion_necessary",
    "criterion_sufficient",
    "x_star_autonomous",
    "one_sided_bound",
    "two_sided_bound",
    "reduce_autonomous_second_order",
    "exponent_solve",
    "beta_diagnostic",
    "asymptotic_fit",
    "default_tolerance",
]

DEFAULT_TOL = 1e-10
_REL_TOL = 1e-13
_MAX_SEGMENTS = 2000

YFunction = Union[Expr, str, Callable[[float], float]]


class EstimateError(ValueError):
    """Preconditions of an estimate are violated."""


class DivergentIntegralError(EstimateError):
    """An integral that must be finite diverges."""


class ExponentError(EstimateError):
    """The exponent balance cannot be solved."""


class TailTooShortError(EstimateError):
    """Not enough of the blow-up tail to fit."""


def default_tolerance() -> float:
    """Absolute quadrature tolerance, overridable by ``BLOWUP_ODE_TOL``."""
    text = os.environ.get("BLOWUP_ODE_TOL")
    if not text:
        return DEFAULT_TOL
    try:
        tol = float(text)
    except ValueError:
        raise EstimateError(f"BLOWUP_ODE_TOL={text!r} is not a number") from None
    if not tol > 0:
        raise EstimateError("BLOWUP_ODE_TOL must be positive")
    return tol


# ------------------------------------------------------------- quadrature


def adaptive_simpson(
    fn: Callable[[float], float],
    a: float,
    b: float,
    tol: float = DEFAULT_TOL,
    rel_tol: float = _REL_TOL,
    max_depth: int = 40,
) -> float:
    """Adaptive Simpson quadrature with Richardson correction.

    A panel is accepted when ``|S_left + S_right - S_whole| <= 15 * max(tol,
    rel_tol * |S|)`` or at ``max_depth``; the absolute tolerance is halved
    per level.
    """
    fa, fm, fb = fn(a), fn(0.5 * (a + b)), fn(b)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, s, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = fn(lm), fn(rm)
        left = (mid - lo) * (flo + 4.0 * flm + fmid) / 6.0
        right = (hi - mid) * (fmid + 4.0 * frm + fhi) / 6.0
        delta = left + right - s
        if depth >= max_depth or abs(delta) <= 15.0 * max(eps, rel_tol * abs(left + right)):
            total += left + right + delta / 15.0
        else:
            stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
            stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
    return total


def improper_integral(
    integrand: Callable[[float], float], a: float, tol: float | None = None
) -> float:
    """``∫_a^∞ integrand(y) dy`` for a non-negative integrand.

    Returns:
        The integral, or ``math.inf`` when the tail diverges: the dyadic
        segment ratio stays at or above one for three segments, the segment
        cap is reached, or y overflows before the tail settles.
    """
    tol = default_tolerance() if tol is None else tol
    head = 0.0
    base = a
    if a <= 0.0:
        head = adaptive_simpson(integrand, a, 1.0, 0.5 * tol)
        base = 1.0
        if not math.isfinite(head):
            return math.inf

    def in_u(u: float) -> float:
        w = 1.0 - u
        return integrand(base / w) * base / (w * w)

    total = head
    prev = None
    prev_ratio = None
    growing = 0
    for k in range(_MAX_SEGMENTS):
        lo_u = 1.0 - 0.5**k
        hi_u = 1.0 - 0.5 ** (k + 1)
        if hi_u >= 1.0 or not math.isfinite(base * 2.0 ** (k + 1)):
            return math.inf
        seg_tol = max(0.5 * tol * 0.5 ** min(k, 40), 1e-300)
        c = adaptive_simpson(in_u, lo_u, hi_u, seg_tol)
        if not math.isfinite(c):
            return math.inf
        total += c
        if c == 0.0:
            return total
        if prev is not None and prev > 0.0:
            ratio = c / prev
            growing = growing + 1 if ratio >= 1.0 else 0
            if growing >= 3:
                return math.inf
            if ratio < 1.0:
                remainder = c * ratio / (1.0 - ratio)
                if remainder <= 1e-3 * tol:
                    return total + remainder
                if prev_ratio is not None and k >= 3 and ratio < 0.999:
                    # error of the geometric remainder from the ratio drift
                    drift = abs(ratio - prev_ratio) * c / (1.0 - ratio) ** 2
                    if drift <= 0.1 * tol and abs(ratio - prev_ratio) <= 1e-6 * ratio:
                        return total + remainder
            prev_ratio = ratio
        prev = c
    return math.inf


def _y_function(f: YFunction) -> Callable[[float], float]:
    if callable(f) and not isinstance(f, Expr):
        return f
    e = parse(f) if isinstance(f, str) else f
    bad = [v for v in e.names if v != "y"]
    if bad:
        raise EstimateError(f"expected an expression in y only, found {bad}")
    return e.compile(("y",))


def _xy_function(f: Expr | str, params: dict | None = None) -> Callable[[float, float], float]:
    e = parse(f, params or {}) if isinstance(f, str) else f
    bad = [v for v in e.free_vars if v not in ("x", "y")]
    if bad:
        raise EstimateError(f"expected an expression in x and y, found {bad}")
    return e.compile(("x", "y"), params or {})


def _reciprocal(fy: Callable[[float], float]) -> Callable[[float], float]:
    def inv(y: float) -> float:
        v = fy(y)
        if not v > 0:  # catches nan as well
            raise EstimateError(f"f must be positive on [a, ∞); f({y:g}) = {v!r}")
        return 1.0 / v

    return inv


def x_star_autonomous(f: YFunction, a: float, tol: float | None = None) -> float:
    """Blow-up point ``∫_a^∞ dy / f(y)`` of ``y' = f(y), y(0) = a``.

    Returns:
        The critical value, or ``math.inf`` when the integral diverges.

    Raises:
        EstimateError: f is not positive somewhere on the integration range.
    """
    return improper_integral(_reciprocal(_y_function(f)), float(a), tol)


# ------------------------------------------------------- limit criteria


def _ladder(f: Callable[[float], float], a: float, power: float) -> list[float]:
    base = a if a > 0 else 1.0
    out = []
    for j in range(0, 9):
        y = base * 10.0**j
        v = f(y)
        if math.isnan(v) or v == -math.inf:
            raise EstimateError(f"f({y:g}) = {v!r} is not a usable sample")
        if v == math.inf:
            out.append(math.inf)
            break
        out.append(v / y**power)
    return out


def _limit_class(values: Sequence[float]) -> str:
    """Classify the limit of a sampled sequence: "zero", "finite" or "infinite".

    Works on log-increments: a contracting geometric pattern means the
    sequence settles; otherwise its sign tells growth from decay.
    """
    if values[-1] == math.inf:
        return "infinite"
    if any(v <= 0 for v in values):
        return "zero" if values[-1] <= 0 else "finite"
    logs = np.log(np.asarray(values, dtype=float))
    d = np.diff(logs)
    last, before = d[-1], d[-2]
    if abs(last) < 1e-12:
        return "finite"
    if before != 0.0 and abs(last / before) < 0.5 and np.sign(last) == np.sign(before):
        return "finite"
    if abs(last) <= 1e-3 * max(abs(v) for v in d):
        return "finite"
    return "infinite" if last > 0 else "zero"


def criterion_necessary(f: YFunction, a: float = 1.0) -> bool:
    """Sampled test of ``f(y)/y → ∞``, necessary for blow-up.

    Samples ``y = a 10^j``, j = 0..8; true when the ratios increase strictly
    and their log-increments do not contract (no finite limit in sight).
    """
    fy = _y_function(f)
    r = _ladder(fy, a, 1.0)
    finite = [v for v in r if math.isfinite(v)]
    increasing = all(b > c for b, c in zip(finite[1:], finite[:-1]))
    if r[-1] == math.inf:
        return increasing
    return increasing and _limit_class(r) == "infinite"


def criterion_sufficient(f: YFunction, kappa: float, a: float = 1.0) -> bool:
    """Sampled test that ``f(y)/y^(1+κ)`` tends to a positive (maybe infinite) limit."""
    if not kappa > 0:
        raise EstimateError("kappa must be positive")
    fy = _y_function(f)
    r = _ladder(fy, a, 1.0 + kappa)
    if r[-1] == math.inf:
        return True
    return r[-1] > 0 and _limit_class(r) != "zero"


# ------------------------------------------------------- one/two-sided


@dataclass(frozen=True)
class BoundsReport:
    """Critical-value estimates.

    Attributes:
        I_g: Upper bound from a minorant, if computed.
        I1: ``∫ dy / f(x0, y)``.
        I2: ``∫ dy / f(x0 + I1, y)``.
        bracket: ``(lo, hi)`` containing x*, or None.
        case: "FxNonNegative", "FxNonPositive" or "OneSidedOnly".
    """

    I_g: float | None = None
    I1: float | None = None
    I2: float | None = None
    bracket: tuple[float, float] | None = None
    case: str = "OneSidedOnly"

    def to_json(self) -> dict[str, Any]:
        return {
            "I_g": self.I_g,
            "I1": self.I1,
            "I2": self.I2,
            "bracket": list(self.bracket) if self.bracket else None,
            "case": self.case,
        }


def _y_samples(a: float, n: int = 20, decades: float = 6.0) -> np.ndarray:
    if a > 0:
        return np.geomspace(a, a * 10.0**decades, n)
    return a + np.geomspace(1.0, 10.0**decades + 1.0, n) - 1.0


def one_sided_bound(
    f: Expr | str,
    g_minorant: YFunction,
    a: float,
    x0: float = 0.0,
    params: dict | None = None,
    tol: float | None = None,
) -> float:
    """Upper bound ``x* <= ∫_a^∞ dy / g(y)`` from a minorant ``g <= f``.

    The minorant condition is spot-checked on a 20×20 grid over
    ``[x0, x0 + I_g] × [a, a·10^6]``.

    Raises:
        EstimateError: ``f >= g > 0`` fails at a grid point.
        DivergentIntegralError: the minorant integral diverges.
    """
    fxy = _xy_function(f, params)
    g = _y_function(g_minorant)
    I_g = x_star_autonomous(g, a, tol)
    if not math.isfinite(I_g):
        raise DivergentIntegralError("minorant integral diverges: no blow-up certificate")
    for x in np.linspace(x0, x0 + I_g, 20):
        for y in _y_samples(a):
            fv, gv = fxy(float(x), float(y)), g(float(y))
            if not gv > 0 or fv < gv - 1e-12 * abs(gv):
                raise EstimateError(
                    f"minorant violated at x={x:g}, y={y:g}: f={fv:g}, g={gv:g}"
                )
    return I_g


def two_sided_bound(
    f: Expr | str,
    a: float,
    x0: float = 0.0,
    params: dict | None = None,
    tol: float | None = None,
) -> BoundsReport:
    """Bracket x* by freezing the x-dependence of f at x0 and at x0 + I1.

    The sign of ``f_x`` is sampled by forward-mode AD on a 20×20 grid
    (400 points) over ``[x0, x0 + I] × [a, a·10^6]``; mixed signs, or f not
    positive on the strip, give ``OneSidedOnly`` with no bracket.

    Raises:
        DivergentIntegralError: I1 diverges.
    """
    e = parse(f, params or {}) if isinstance(f, str) else f
    fxy = _xy_function(e, params)
    I1 = improper_integral(_reciprocal(lambda y: fxy(x0, y)), float(a), tol)
    if not math.isfinite(I1):
        raise DivergentIntegralError("I1 diverges: no blow-up certificate")
    I2 = improper_integral(_reciprocal(lambda y: fxy(x0 + I1, y)), float(a), tol)
    dfx = compile_partials(e, ("x", "y"), ("x",), params or {})

    def strip_signs(width: float) -> tuple[bool, bool, bool]:
        nonneg = nonpos = positive = True
        scale = 0.0
        samples = []
        for x in np.linspace(x0, x0 + width, 20):
            for y in _y_samples(a):
                v, (fx,) = dfx(float(x), float(y))
                samples.append(fx)
                positive &= v > 0
                if math.isfinite(fx):
                    scale = max(scale, abs(fx))
        eps = 1e-12 * scale
        for fx in samples:
            if math.isnan(fx):
                nonneg = nonpos = False
            else:
                nonneg &= fx >= -eps
                nonpos &= fx <= eps
        return nonneg, nonpos, positive

    nonneg, nonpos, positive = strip_signs(I1)
    if nonneg and positive:
        return BoundsReport(None, I1, I2, (min(I2, I1), I1), "FxNonNegative")
    if nonpos and math.isfinite(I2):
        nonneg2, nonpos2, positive2 = strip_signs(I2)
        if nonpos2 and positive2:
            return BoundsReport(None, I1, I2, (I1, max(I1, I2)), "FxNonPositive")
    return BoundsReport(None, I1, I2 if math.isfinite(I2) else None, None, "OneSidedOnly")


# -------------------------------------------- autonomous second order


class FirstIntegral:
    """``F(y) = sqrt(2 ∫_a^y f(z) dz + b²)`` for ``y'' = f(y)``.

    Evaluation integrates from the nearest cached point below y, so the
    increasing sweeps done by quadrature stay cheap.
    """

    def __init__(self, f: YFunction, a: float, b: float, tol: float = 1e-13):
        if b < 0:
            raise EstimateError("b must be non-negative")
        self.f = _y_function(f)
        self.a = float(a)
        self.b = float(b)
        self.tol = tol
        self._ys = [self.a]
        self._vals = [0.0]

    def integral(self, y: float) -> float:
        """``∫_a^y f``."""
        if y < self.a:
            raise EstimateError("first integral is defined for y >= a")
        i = bisect.bisect_right(self._ys, y) - 1
        y0, acc = self._ys[i], self._vals[i]
        if y == y0:
            return acc
        piece = adaptive_simpson(self.f, y0, y, 0.0, rel_tol=self.tol)
        total = acc + piece
        if math.isfinite(total) and len(self._ys) < 100_000:
            self._ys.insert(i + 1, y)
            self._vals.insert(i + 1, total)
        return total

    def __call__(self, y: float) -> float:
        rad = 2.0 * self.integral(y) + self.b * self.b
        if rad < 0:
            raise EstimateError(f"negative radicand {rad!r} at y={y:g}")
        return math.sqrt(rad)


def reduce_autonomous_second_order(f: YFunction, a: float, b: float) -> FirstIntegral:
    """First integral of ``y'' = f(y), y(0) = a, y'(0) = b``, so ``y' = F(y)``.

    Pass the result to :func:`x_star_autonomous` to get x*.
    """
    fy = _y_function(f)
    for y in _y_samples(a, 12):
        v = fy(float(y))
        if not v > 0:
            raise EstimateError(f"f must be positive for y >= a; f({y:g}) = {v!r}")
    return FirstIntegral(fy, a, b)


# ---------------------------------------------------------- exponents


@dataclass(frozen=True)
class ExponentReport:
    """Dominant-balance exponents of ``y_m ≈ α_m (x* - x)^(-β_m)``.

    Attributes:
        betas: Exponents, one per component.
        growing_index: 1-based component with the largest exponent.
        alphas: Amplitudes; not solved, always None.
        exact: Exponents as fractions.
    """

    betas: tuple[float, ...]
    growing_index: int
    alphas: None = None
    exact: tuple[Fraction, ...] = field(default=(), compare=False)

    def to_json(self) -> dict[str, Any]:
        return {
            "betas": list(self.betas),
            "betas_exact": [str(b) for b in self.exact],
            "growing_index": self.growing_index,
            "alphas": None,
        }


def _fraction(v: float) -> Fraction:
    return Fraction(v).limit_denominator(10**6)


def _monomials(node, names: Sequence[str], params: dict) -> list[tuple[float, tuple[Fraction, ...]]]:
    """Signed monomials ``c · Π y_j^d_j`` of a polynomial-type expression.

    Factors free of the state (constants, parameters, functions of x) go
    into the coefficient; x-dependent ones count as 1 since x stays bounded.
    """
    n = len(names)
    zero = (Fraction(0),) * n
    env_names = ("z",)

    def has_state(nd) -> bool:
        if isinstance(nd, Var):
            return nd.name in names
        if isinstance(nd, Neg):
            return has_state(nd.operand)
        if isinstance(nd, BinOp):
            return has_state(nd.left) or has_state(nd.right)
        if isinstance(nd, Call):
            return has_state(nd.arg)
        return False

    def const_value(nd) -> float | None:
        e = Expr(nd, (), (), "")
        try:
            return float(e.compile(env_names, params)(0.0))
        except Exception:
            return None  # depends on x

    def term(nd) -> tuple[float, tuple[Fraction, ...]]:
        if not has_state(nd):
            v = const_value(nd)
            return (1.0 if v is None else v), zero
        if isinstance(nd, Var):
            d = [Fraction(0)] * n
            d[names.index(nd.name)] = Fraction(1)
            return 1.0, tuple(d)
        if isinstance(nd, Neg):
            c, d = term(nd.operand)
            return -c, d
        if isinstance(nd, BinOp) and nd.op in "*/":
            cl, dl = term(nd.left)
            cr, dr = term(nd.right)
            if nd.op == "*":
                return cl * cr, tuple(p + q for p, q in zip(dl, dr))
            return (cl / cr if cr else math.inf), tuple(p - q for p, q in zip(dl, dr))
        if isinstance(nd, BinOp) and nd.op == "^":
            ev = const_value(nd.right) if not has_state(nd.right) else None
            if ev is None or not math.isfinite(ev):
                raise ExponentError("exponents must be constants")
            c, d = term(nd.left)
            q = _fraction(ev)
            return (abs(c) ** ev if c != 0 else 0.0), tuple(p * q for p in d)
        raise ExponentError(f"rhs is not a sum of monomials in {list(names)}")

    def split(nd, sign: float) -> list[tuple[float, tuple[Fraction, ...]]]:
        if isinstance(nd, BinOp) and nd.op in "+-":
            return split(nd.left, sign) + split(nd.right, sign if nd.op == "+" else -sign)
        if isinstance(nd, Neg):
            return split(nd.operand, -sign)
        c, d = term(nd)
        return [(sign * c, d)]

    return [(c, d) for c, d in split(node, 1.0) if c != 0.0]


def _solve_fraction(A: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction] | None:
    n = len(A)
    M = [row[:] + [r] for row, r in zip(A, rhs)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            return None
        M[col], M[piv] = M[piv], M[col]
        for r in range(n):
            if r != col and M[r][col] != 0:
                factor = M[r][col] / M[col][col]
                M[r] = [a - factor * b for a, b in zip(M[r], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


def exponent_solve(sys: Problem) -> ExponentReport:
    """Dominant-balance exponents for a system with polynomial-type rhs.

    Solves ``β_m + 1 = max_monomials Σ_j d_mj β_j`` in rational arithmetic
    by trying every choice of dominant monomial per equation and keeping
    the choices whose solution makes the chosen monomials maximal.

    Raises:
        ExponentError: non-polynomial rhs, no consistent balance (for
            example the linear equation y' = y), or several distinct ones.
    """
    p = reduce_to_system(sys) if sys.kind in (Kind.SECOND, Kind.NTH) else sys
    names = p.state_names
    n = len(names)
    params = dict(p.params)
    terms = [_monomials(e.ast, names, params) for e in p.rhs]
    if any(not t for t in terms):
        raise ExponentError("an equation has an identically zero right-hand side")
    options = [sorted({d for _, d in t}) for t in terms]
    solutions: set[tuple[Fraction, ...]] = set()
    for choice in product(*options):
        A = [[choice[m][j] - (1 if j == m else 0) for j in range(n)] for m in range(n)]
        beta = _solve_fraction(A, [Fraction(1)] * n)
        if beta is None:
            continue
        ok = True
        for m in range(n):
            chosen = sum(c * b for c, b in zip(choice[m], beta))
            if any(sum(c * b for c, b in zip(d, beta)) > chosen for d in options[m]):
                ok = False
                break
        if ok and max(beta) > 0:
            solutions.add(tuple(beta))
    if not solutions:
        raise ExponentError("singular or inconsistent exponent balance: no power-law blow-up")
    if len(solutions) > 1:
        raise ExponentError(f"ambiguous exponent balance: {sorted(solutions)}")
    beta = solutions.pop()
    k = max(range(n), key=lambda i: beta[i])
    return ExponentReport(tuple(float(b) for b in beta), k + 1, None, beta)


# -------------------------------------------------------- 1/β diagnostic


@dataclass(frozen=True)
class DiagnosticSeries:
    """Grid estimates of 1/β along a run.

    Attributes:
        xi: Parameter grid.
        inv_beta: 1/β estimate at each node.
    """

    xi: np.ndarray
    inv_beta: np.ndarray

    def tail(self, fraction: float = 0.25) -> np.ndarray:
        """Estimates over the last ``fraction`` of interior nodes."""
        interior = self.inv_beta[1:-1]
        start = int(len(interior) * (1.0 - fraction))
        return interior[start:]

    @property
    def tail_value(self) -> float:
        """Median of the tail estimates."""
        return float(np.median(self.tail()))

    def to_json(self) -> dict[str, Any]:
        return {"tail_inv_beta": self.tail_value}


def _second_difference(v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return out


def beta_diagnostic(ps) -> DiagnosticSeries:
    """Estimate 1/β at every node from grid differences.

    Uses ``1/β = (y / y') (y''/y' - x''/x') - 1`` with derivatives in the
    parameter: central differences inside, second-order one-sided at the ends.

    Raises:
        EstimateError: fewer than 5 nodes, non-uniform grid, or ``y' = 0``
            at an interior node.
    """
    xi = np.asarray(ps.xi, dtype=float)
    if len(xi) < 5:
        raise EstimateError("need at least 5 nodes")
    steps = np.diff(xi)
    h = float(steps[0])
    if not np.allclose(steps, h, rtol=1e-8, atol=1e-12 * max(1.0, abs(xi[-1]))):
        raise EstimateError("grid must be uniform")
    y = np.asarray(ps.y_growth, dtype=float)
    x = np.asarray(ps.x, dtype=float)
    dy = np.gradient(y, h, edge_order=2)
    dx = np.gradient(x, h, edge_order=2)
    if np.any(dy[1:-1] == 0.0):
        raise EstimateError("y' vanishes at an interior node")
    d2y = _second_difference(y, h)
    d2x = _second_difference(x, h)
    with np.errstate(all="ignore"):
        inv_beta = (y / dy) * (d2y / dy - d2x / dx) - 1.0
    return DiagnosticSeries(xi, inv_beta)


# ----------------------------------------------------------- asymptotics


@dataclass(frozen=True)
class AsymptoticFit:
    """Fit of ``y ≈ A (x* - x)^(-β)`` to the tail of a run."""

    A: float
    beta: float
    x_star: float
    residual: float

    def to_json(self) -> dict[str, Any]:
        return {"A": self.A, "beta": self.beta, "x_star": self.x_star, "residual": self.residual}


def asymptotic_fit(ps, decades: float = 2.0) -> AsymptoticFit:
    """Least-squares fit of ``ln y = ln A - β ln(x* - x)`` with x* refined.

    The tail is the set of nodes with ``y >= y_last / 10^decades``. For each
    trial x* the fit is linear; x* minimizes the residual.

    Raises:
        TailTooShortError: y does not span ``decades`` decades.
    """
    y = np.asarray(ps.y_growth, dtype=float)
    x = np.asarray(ps.x, dtype=float)
    y_last = y[-1]
    if not (y_last > 0 and np.min(y) > 0 and y_last / np.min(y) >= 10.0**decades * (1 - 1e-9)):
        raise TailTooShortError(f"y must span {decades:g} decades; the run ends at y = {y_last:g}")
    mask = y >= y_last / 10.0**decades
    xt, lyt = x[mask], np.log(y[mask])
    if len(xt) < 5:
        raise TailTooShortError("fewer than 5 nodes in the fitted tail")
    x_last = xt[-1]
    span = max(x_last - xt[0], 1e-12)

    def fit(delta: float) -> tuple[float, float, float]:
        s = np.log(x_last + delta - xt)
        design = np.column_stack([np.ones_like(s), -s])
        coef, *_ = np.linalg.lstsq(design, lyt, rcond=None)
        res = float(np.sum((design @ coef - lyt) ** 2))
        return res, float(coef[0]), float(coef[1])

    lo = math.log(max(1e-15, 8 * np.finfo(float).eps * max(1.0, abs(x_last))))
    hi = math.log(100.0 * span)
    grid = np.linspace(lo, hi, 121)
    scores = [fit(math.exp(u))[0] for u in grid]
    i = int(np.argmin(scores))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best = minimize_scalar(lambda u: fit(math.exp(u))[0], bounds=(a, b), method="bounded",
                           options={"xatol": 1e-10})
    u = best.x if best.fun <= scores[i] else grid[i]
    res, lnA, beta = fit(math.exp(u))
    return AsymptoticFit(math.exp(lnA), beta, float(x_last + math.exp(u)), res)
