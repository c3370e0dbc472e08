"""Step-size calibration and the method-comparison tables."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .driver import GuardTrip, StopPolicy, StopReason, solve
from .problems import ExactSolution, Problem, registry_get
from .transforms import _EXP_SLOTS, Method, TransformError, TransformSpec, build

__all__ = [
    "BenchError",
    "BenchCell",
    "BenchTable",
    "TableRow",
    "TABLES",
    "REFERENCE_COUNTS",
    "CSV_COLUMNS",
    "measure_error",
    "calibrate",
    "run_table",
    "check_table",
    "slow_enabled",
]

CSV_COLUMNS = ("method", "g", "xi_max", "h", "n_points", "max_error_pct")
MIN_WINDOW_NODES = 5


class BenchError(RuntimeError):
    """A benchmark run could not be measured or calibrated."""


# ------------------------------------------------------------ measurement


@dataclass(frozen=True)
class _Trial:
    error_pct: float
    xi_max: float
    n_steps: int
    window_nodes: int


def _trial(
    p: Problem,
    sol: ExactSolution,
    spec: TransformSpec,
    h: float,
    stop: StopPolicy,
    metric: str,
) -> _Trial:
    if sol.state is None:
        raise BenchError(f"{p.name} has no closed-form solution to measure against")
    lambda_cap = stop.lambda_target
    try:
        report = solve(p, spec, stop, h)
    except GuardTrip as exc:
        raise BenchError(f"denominator guard fired at h={h:g}: {exc}") from exc
    if report.stop_reason is not StopReason.LAMBDA_TARGET:
        raise BenchError(f"run at h={h:g} stopped by {report.stop_reason.value} before Λ reached {lambda_cap:g}")
    ps = report.ps
    window = ps.lambda_m <= lambda_cap
    n_steps = len(ps) - 1
    xi_max = float(ps.xi[-1] - ps.xi[0])
    if metric == "y_of_x":
        err = _y_of_x_error(p, sol, ps, window)
    elif metric == "slot":
        err = _slot_error(p, spec, ps, window)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return _Trial(err, xi_max, n_steps, int(np.count_nonzero(window)))


def _y_of_x_error(p: Problem, sol: ExactSolution, ps, window: np.ndarray) -> float:
    exact = sol.compiled()
    cols = range(len(exact)) if not p.is_scalar else (0,)
    worst = 0.0
    x_star = sol.x_star
    for i in np.flatnonzero(window):
        x = float(ps.x[i])
        if x_star is not None and x >= x_star:
            return math.inf
        for c in cols:
            ye = exact[c](x)
            err = abs(ps.states[i, c] - ye) / abs(ye) * 100.0
            if not err <= worst:
                worst = err if math.isfinite(err) else math.inf
    return worst


def _slot_error(p: Problem, spec: TransformSpec, ps, window: np.ndarray) -> float:
    m = spec.method
    if m in _EXP_SLOTS:
        j = _EXP_SLOTS[m][0]
    elif m is Method.GROWTH:
        j = ps.growth_index
    else:
        raise ValueError("metric 'slot' applies to exp-type and growth methods only")
    tp = build(p, spec)
    base = p.initial[j] + tp.shift
    expected = base * np.exp(ps.xi - ps.xi[0]) - tp.shift
    num = ps.states[:, j]
    rel = np.abs(num - expected) / np.abs(expected) * 100.0
    return float(np.max(rel[window]))


def measure_error(
    p: Problem,
    sol: ExactSolution,
    spec: TransformSpec,
    h: float,
    stop: StopPolicy | None = None,
    *,
    metric: str = "y_of_x",
) -> float:
    """Maximum percent error over the nodes with Λ ≤ cap.

    Args:
        p: Problem.
        sol: Its exact solution.
        spec: Transformation.
        h: Step size.
        stop: Supplies the cap (``lambda_target``, default 50).
        metric: "y_of_x" compares y at each node with ``y_exact(x_node)``
            (all components for systems); a node at or past x* counts as an
            infinite error. "slot" compares the integrated exponential slot
            of an exp-type method with its closed form.

    Raises:
        BenchError: no exact solution, or the run stopped before Λ reached
            the cap.
    """
    stop = stop or StopPolicy()
    return _trial(p, sol, spec, h, stop, metric).error_pct


# ------------------------------------------------------------ calibration


@dataclass(frozen=True)
class BenchCell:
    """One table row.

    Attributes:
        method_label: Method name.
        g_label: Gauge description.
        xi_max: Parameter length up to the first node with Λ ≥ cap.
        h: Calibrated step.
        n_points: Number of steps to ``xi_max`` (``xi_max / h``).
        max_error_pct: Error at ``h``.
    """

    method_label: str
    g_label: str
    xi_max: float
    h: float
    n_points: int
    max_error_pct: float

    def csv_row(self) -> list[str]:
        return [
            self.method_label,
            self.g_label,
            f"{self.xi_max:.6g}",
            f"{self.h:.6g}",
            str(self.n_points),
            f"{self.max_error_pct:.6g}",
        ]


def _round_down_sig(x: float, digits: int = 3) -> float:
    e = math.floor(math.log10(x)) - (digits - 1)
    return math.floor(x / 10.0**e) * 10.0**e


def calibrate(
    p: Problem,
    sol: ExactSolution,
    spec: TransformSpec,
    target_error_pct: float,
    *,
    lambda_cap: float = 50.0,
    h0: float = 2.0,
    h_min: float = 1e-6,
    method_label: str = "",
    g_label: str = "",
    max_steps: int = 50_000_000,
) -> BenchCell:
    """Largest step (3 significant digits) meeting the error target.

    The step is halved from ``h0`` until the target is met with at least
    five nodes inside the Λ window, then the pass/fail bracket is bisected
    on log h.

    Raises:
        BenchError: the target is not met for any h ≥ h_min.
    """

    stop = StopPolicy(lambda_target=lambda_cap, max_steps=max_steps)

    def passes(h: float) -> _Trial | None:
        try:
            t = _trial(p, sol, spec, h, stop, "y_of_x")
        except (BenchError, TransformError):
            return None
        if t.error_pct <= target_error_pct and t.window_nodes >= MIN_WINDOW_NODES:
            return t
        return None

    hi = None
    h = h0
    good = passes(h)
    while good is None:
        hi = h
        h *= 0.5
        if h < h_min:
            raise BenchError(f"target {target_error_pct}% not reached for h ≥ {h_min:g}")
        good = passes(h)
    lo = h
    if hi is not None:
        while hi / lo > 1.0 + 1e-3 and _round_down_sig(hi) != _round_down_sig(lo):
            mid = math.sqrt(lo * hi)
            t = passes(mid)
            if t is None:
                hi = mid
            else:
                lo, good = mid, t
    h_final = _round_down_sig(lo)
    if h_final != lo:
        t = passes(h_final)
        if t is not None:
            lo, good = h_final, t
    return BenchCell(
        method_label=method_label or spec.method.value,
        g_label=g_label or (spec.g or ""),
        xi_max=good.xi_max,
        h=lo,
        n_points=good.n_steps,
        max_error_pct=good.error_pct,
    )


# ----------------------------------------------------------------- tables


@dataclass(frozen=True)
class TableRow:
    """A (method, gauge) configuration of a comparison table."""

    method_label: str
    g_label: str
    spec: TransformSpec
    arc_family: bool = False
    slow: bool = False


def _gauge(method: str, **kw) -> TransformSpec:
    return TransformSpec(Method.parse(method), closed_form=False, **kw)


TABLES: dict[str, tuple[str, tuple[TableRow, ...]]] = {
    "T1": (
        "power1",
        (
            TableRow("Hodograph", "g=f", _gauge("hodograph")),
            TableRow("Arc-length", "g=sqrt(1+f^2)", _gauge("arc-length"), arc_family=True),
            TableRow("Non-local", "g=1+|f|", _gauge("one-plus-abs"), arc_family=True),
            TableRow("Exp-type", "g=f/y", _gauge("exp-f-over-y")),
            TableRow("Constraint", "g=f/(y*(1+2*xi))", _gauge("constraint", g="f/(y*(1+2*xi))")),
            TableRow("Modified differential", "t=t0*exp(2*tau)",
                     TransformSpec(Method.MODIFIED_DIFFERENTIAL, lam=2.0)),
        ),
    ),
    "T2": (
        "ode2-power",
        (
            TableRow("Arc-length", "g=sqrt(1+t^2+f^2)", _gauge("arc-length"), arc_family=True),
            TableRow("Non-local", "g=1+|t|+|f|", _gauge("one-plus-abs"), arc_family=True),
            TableRow("Hodograph", "g=t", _gauge("hodograph")),
            TableRow("Exp-type", "g=f/t", _gauge("exp-f-over-t")),
            TableRow("Constraint", "g=f/(2*t*(1+2*xi))", _gauge("constraint", g="f/(2*t*(1+2*xi))")),
            TableRow("Exp-type", "g=t/y", _gauge("exp-t-over-y")),
            TableRow("Constraint", "g=t/(2*(xi+1)*exp(2*xi+xi^2))",
                     _gauge("constraint", g="t/(2*(xi+1)*exp(2*xi+xi^2))")),
        ),
    ),
    "T3": (
        "ode3-power",
        (
            TableRow("Arc-length", "g=sqrt(1+t^2+w^2+f^2)", _gauge("arc-length"), arc_family=True, slow=True),
            TableRow("Non-local", "g=1+|t|+|w|+|f|", _gauge("one-plus-abs"), arc_family=True, slow=True),
            TableRow("Hodograph", "g=t", _gauge("hodograph")),
            TableRow("Exp-type", "g=f/w", _gauge("exp-f-over-w")),
            TableRow("Exp-type", "g=t/y", _gauge("exp-t-over-y")),
            TableRow("Exp-type", "g=w/t", _gauge("exp-w-over-t")),
        ),
    ),
}

# Published grid-point counts, in TABLES row order, keyed by target (percent).
REFERENCE_COUNTS: dict[str, dict[float, tuple[int, ...]]] = {
    "T1": {
        0.1: (213, 164, 125, 25, 24, 17),
        0.01: (377, 290, 218, 44, 44, 30),
        0.005: (467, 357, 271, 54, 53, 38),
    },
    "T2": {
        0.1: (6024, 3369, 109, 37, 33, 30, 28),
        0.005: (12500, 7268, 392, 79, 74, 65, 61),
    },
    "T3": {
        0.1: (320000, 180000, 290, 47, 40, 38),
        0.01: (560000, 310000, 516, 85, 70, 64),
    },
}


def slow_enabled() -> bool:
    """True when BLOWUP_ODE_SLOW is set to a truthy value."""
    return os.environ.get("BLOWUP_ODE_SLOW", "").lower() in ("1", "true", "yes", "on")


@dataclass(frozen=True)
class BenchTable:
    """Calibrated rows of one table at one target.

    Attributes:
        table_id: "T1", "T2" or "T3".
        target_error_pct: Error target in percent.
        lambda_cap: Λ window bound.
        cells: Calibrated rows; None where a slow row was skipped.
    """

    table_id: str
    target_error_pct: float
    lambda_cap: float
    cells: tuple[BenchCell | None, ...]

    def computed(self) -> list[BenchCell]:
        return [c for c in self.cells if c is not None]

    def ranked(self) -> list[BenchCell]:
        """Computed cells sorted by n_points, largest first."""
        return sorted(self.computed(), key=lambda c: -c.n_points)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for cell in self.computed():
                writer.writerow(cell.csv_row())

    def to_json(self) -> dict:
        return {
            "table": self.table_id,
            "target_error_pct": self.target_error_pct,
            "lambda_cap": self.lambda_cap,
            "cells": [asdict(c) if c is not None else None for c in self.cells],
        }


def _calibrate_row(args: tuple[str, int, float, float]) -> BenchCell:
    table_id, index, target, cap = args
    name, rows = TABLES[table_id]
    row = rows[index]
    p, sol = registry_get(name)
    return calibrate(p, sol, row.spec, target, lambda_cap=cap,
                     method_label=row.method_label, g_label=row.g_label)


def run_table(
    table_id: str,
    targets: Sequence[float],
    *,
    slow: bool | None = None,
    workers: int = 1,
    lambda_cap: float = 50.0,
) -> list[BenchTable]:
    """Calibrate every row of a table at each target.

    Args:
        table_id: "T1", "T2" or "T3".
        targets: Error targets in percent.
        slow: Include rows marked slow (T3 arc-length family); default from
            BLOWUP_ODE_SLOW.
        workers: Process count; results keep row order regardless.

    Raises:
        KeyError: unknown table.
        BenchError: a row cannot meet a target.
    """
    if table_id not in TABLES:
        raise KeyError(f"unknown table {table_id!r}; known: {', '.join(TABLES)}")
    slow = slow_enabled() if slow is None else slow
    _, rows = TABLES[table_id]
    out = []
    for target in targets:
        jobs = [(table_id, i, float(target), lambda_cap) for i, r in enumerate(rows) if slow or not r.slow]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_calibrate_row, jobs))
        else:
            results = [_calibrate_row(j) for j in jobs]
        by_index = {job[1]: cell for job, cell in zip(jobs, results)}
        cells = tuple(by_index.get(i) for i in range(len(rows)))
        out.append(BenchTable(table_id, float(target), lambda_cap, cells))
    return out


@dataclass(frozen=True)
class TableCheck:
    """Comparison of a computed table with the published counts."""

    ordering_ok: bool
    counts_ok: bool
    lines: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.ordering_ok and self.counts_ok


def check_table(table: BenchTable) -> TableCheck:
    """Check rank order and count tolerances against the published counts.

    Ordering: every pair the reference orders strictly must be ordered the
    same way (ties in the reference accept either order). Counts: within
    ±30%, or within a factor of 2 for arc-length-family rows. Skipped rows
    are left out.

    Raises:
        KeyError: no published counts for this table and target.
    """
    ref = REFERENCE_COUNTS[table.table_id][table.target_error_pct]
    _, rows = TABLES[table.table_id]
    present = [i for i, c in enumerate(table.cells) if c is not None]
    ordering_ok = True
    for a in present:
        for b in present:
            if ref[a] > ref[b] and not table.cells[a].n_points > table.cells[b].n_points:
                ordering_ok = False
    counts_ok = True
    lines = []
    for i in present:
        cell = table.cells[i]
        ratio = cell.n_points / ref[i]
        ok = (0.5 <= ratio <= 2.0) if rows[i].arc_family else (0.7 <= ratio <= 1.3)
        counts_ok &= ok
        lines.append(
            f"{'ok  ' if ok else 'FAIL'} {cell.method_label:22s} {cell.g_label:32s} "
            f"n={cell.n_points:<8d} published={ref[i]:<8d} h={cell.h:.4g} err={cell.max_error_pct:.4g}%"
        )
    return TableCheck(ordering_ok, counts_ok, tuple(lines))
