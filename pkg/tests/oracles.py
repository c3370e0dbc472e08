"""Independent reference computations shared by the test modules."""

from __future__ import annotations

import math

import numpy as np
from hypothesis import strategies as st

from blowup_ode.expr import eval_with_partials, parse
from blowup_ode.problems import REGISTRY, Kind, registry_get

# ------------------------------------------------------------ expressions

_LEAVES = st.sampled_from(["x", "y", "0.5", "1.5", "2", "3"])


def _grow(children):
    unary = st.sampled_from(
        [
            "sin({})",
            "cos({})",
            "arctan({})",
            "exp(sin({}))",
            "sqrt(1+({})^2)",
            "ln(2+cos({}))",
            "-({})",
            "({})^2",
            "({})^3",
            "abs({})",
        ]
    )
    binary = st.sampled_from(["({}+{})", "({}-{})", "({}*{})", "({}/{})", "(1+({})^2)^({}/4)"])
    return st.one_of(
        st.tuples(unary, children).map(lambda t: t[0].format(t[1])),
        st.tuples(binary, children, children).map(lambda t: t[0].format(t[1], t[2])),
    )


expressions = st.recursive(_LEAVES, _grow, max_leaves=8)
# coordinates below 1e-6 in magnitude are snapped to 0: there AD of
# expressions such as (y+y)/(y+y) cancels catastrophically in double precision
_coord = st.floats(-2.0, 2.0).map(lambda v: 0.0 if abs(v) < 1e-6 else v)
points = st.lists(st.tuples(_coord, _coord), min_size=10, max_size=10)


def _hidden_structure(at, step: float, base: float, fd: float, tol: float) -> bool:
    """True when much finer steps see a different slope than ``step`` does.

    This catches poles or kinks closer to the point than the step. Probes
    whose difference quotient is dominated by roundoff are ignored.
    """
    for k in (3, 6, 9, 12):
        s = step * 10.0**-k
        if s < 4 * math.ulp(base):
            break
        fp, fm = at(s), at(-s)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            return True
        noise = 4 * np.finfo(float).eps * max(abs(fp), abs(fm)) / s
        if abs((fp - fm) / (2 * s) - fd) > tol + noise:
            return True
    return False


def ad_fd_mismatches(src: str, pts, rel: float = 1e-6) -> list[str]:
    """Points where AD and a central difference disagree beyond 1e-5 relative.

    Points near a pole or a kink are skipped: there the forward and backward
    quotients disagree, or the central quotient moves when the step shrinks.
    """
    e = parse(src)
    f = e.compile(("x", "y"))
    bad = []
    for x, y in pts:
        d = eval_with_partials(e, {"x": x, "y": y}, ["x", "y"])
        if not math.isfinite(d.value) or abs(d.value) > 1e8:
            continue
        for v in ("x", "y"):
            base = x if v == "x" else y

            def at(offset: float) -> float:
                return f(x + offset, y) if v == "x" else f(x, y + offset)

            step = rel * max(1.0, abs(base))
            f0, fp, fm = d.value, at(step), at(-step)
            fd = (fp - fm) / (2 * step)
            fwd, bwd = (fp - f0) / step, (f0 - fm) / step
            fine = (at(step / 10) - at(-step / 10)) / (step / 5)
            ad = d.partials[v]
            if not all(map(math.isfinite, (fd, fwd, bwd, fine, ad))):
                continue
            tol = 1e-5 * max(abs(ad), abs(fd)) + 1e-8 * max(1.0, abs(d.value))
            # the difference quotient's own error estimate must be well inside tol
            if abs(fwd - bwd) > 1e-3 * max(abs(fd), 1.0) or abs(fd - fine) > 0.1 * tol:
                continue
            if _hidden_structure(at, step, base, fd, tol):
                continue
            if abs(ad - fd) > tol:
                bad.append(f"{src} at x={x}, y={y}: d/d{v} AD={ad} FD={fd}")
    return bad


# ---------------------------------------------------------------- problems


def residual_check(name: str, overrides: dict | None = None, n: int = 50) -> float:
    """Largest relative residual of the exact solution in the ODE.

    Derivatives of the exact expressions come from AD in x; samples cover
    ``[x0, 0.9 x*]`` (or ``[x0, x0 + 1]`` without blow-up).
    """
    p, sol = registry_get(name, overrides)
    assert sol.state is not None
    end = 0.9 * sol.x_star if sol.x_star is not None else p.x0 + 1.0
    F = p.first_order_field()
    worst = 0.0
    for x in np.linspace(p.x0, end, n):
        env = {"x": float(x), **sol.params}
        vals, ders = [], []
        for e in sol.state:
            d = eval_with_partials(e, env, ["x"])
            vals.append(d.value)
            ders.append(d.partials["x"])
        rhs = F(float(x), vals)
        for lhs, r in zip(ders, rhs):
            worst = max(worst, abs(lhs - r) / max(abs(r), 1e-300 if r else 1.0))
    return worst


def registry_with_exact() -> list[str]:
    return [name for name, entry in REGISTRY.items() if entry.exact is not None]


def first_order_blow_up_entries() -> list[str]:
    out = []
    for name, entry in REGISTRY.items():
        if entry.kind is Kind.FIRST:
            _, sol = registry_get(name)
            if sol.x_star is not None:
                out.append(name)
    return out
