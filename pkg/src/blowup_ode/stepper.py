"""Fixed-step explicit integrators (Euler, midpoint, classical RK4).

States are plain Python float lists internally; trajectories are returned
as numpy arrays. Every stage is checked for non-finite values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "HaltReason",
    "VectorField",
    "Trajectory",
    "GuardTripped",
    "rk4_fixed",
    "euler_fixed",
    "midpoint_fixed",
    "integrate",
    "convergence_order",
]

FieldFn = Callable[[Sequence[float], float], Sequence[float]]
Guard = Callable[[Sequence[float], float, Sequence[float]], bool]


class HaltReason(str, Enum):
    REACHED_END = "ReachedEnd"
    NON_FINITE = "NonFinite"
    GUARD_TRIGGERED = "GuardTriggered"


class GuardTripped(Exception):
    """Raised by a vector field when its own precondition fails at a state.

    The integrator stops with ``HaltReason.GUARD_TRIGGERED`` and keeps the
    exception on the trajectory.
    """


@dataclass(frozen=True)
class VectorField:
    """Right-hand side ``ds/dτ = eval(s, τ)`` of dimension ``dim``."""

    dim: int
    eval: FieldFn

    def __call__(self, s: Sequence[float], tau: float) -> Sequence[float]:
        return self.eval(s, tau)


@dataclass(frozen=True)
class Trajectory:
    """Integrator output.

    Attributes:
        grid: τ values of the stored nodes, ``τ0 + i h``.
        states: Array of shape (len(grid), dim); all rows finite.
        halt_reason: Why integration stopped.
        halt_tau: τ of the attempted step that halted it (equal to the last
            grid value for guard stops and normal ends).
        h: Step size.
        detail: Message for field-raised guard trips.
    """

    grid: np.ndarray
    states: np.ndarray
    halt_reason: HaltReason
    halt_tau: float
    h: float
    detail: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.grid) - 1


def _finite(v: Sequence[float]) -> bool:
    for c in v:
        if not math.isfinite(c):
            return False
    return True


def _rk4_step(f: FieldFn, s: list, tau: float, h: float, k1: Sequence[float]):
    half = 0.5 * h
    y2 = [a + half * b for a, b in zip(s, k1)]
    k2 = f(y2, tau + half)
    if not _finite(k2):
        return None
    y3 = [a + half * b for a, b in zip(s, k2)]
    k3 = f(y3, tau + half)
    if not _finite(k3):
        return None
    y4 = [a + h * b for a, b in zip(s, k3)]
    k4 = f(y4, tau + h)
    if not _finite(k4):
        return None
    sixth = h / 6.0
    return [a + sixth * (b + 2.0 * (c + d) + e) for a, b, c, d, e in zip(s, k1, k2, k3, k4)]


def _euler_step(f: FieldFn, s: list, tau: float, h: float, k1: Sequence[float]):
    return [a + h * b for a, b in zip(s, k1)]


def _midpoint_step(f: FieldFn, s: list, tau: float, h: float, k1: Sequence[float]):
    half = 0.5 * h
    k2 = f([a + half * b for a, b in zip(s, k1)], tau + half)
    if not _finite(k2):
        return None
    return [a + h * b for a, b in zip(s, k2)]


_STEPS = {"rk4": _rk4_step, "euler": _euler_step, "midpoint": _midpoint_step}


def integrate(
    fld: VectorField | FieldFn,
    s0: Sequence[float],
    tau0: float,
    h: float,
    guard: Guard | None = None,
    *,
    method: str = "rk4",
    tau_end: float | None = None,
    n_steps: int | None = None,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """Integrate with a fixed step until the guard fires or the end is reached.

    Args:
        fld: Vector field.
        s0: Finite initial state.
        tau0: Initial value of the independent variable.
        h: Step size, positive.
        guard: Called as ``guard(state, tau, dstate)`` after every accepted
            step, where ``dstate`` is the field at the new state. Returning
            True stops integration with that state stored last.
        method: "rk4", "euler" or "midpoint".
        tau_end: Stop once τ reaches this value (node-rounded).
        n_steps: Stop after this many steps.
        max_steps: Hard cap on the number of steps.

    Returns:
        The trajectory. Halting is data, never an exception.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    s = [float(v) for v in s0]
    if not _finite(s):
        raise ValueError("initial state must be finite")
    step = _STEPS[method]
    f = fld.eval if isinstance(fld, VectorField) else fld
    limit = max_steps
    if n_steps is not None:
        limit = min(limit, n_steps)
    if tau_end is not None:
        limit = min(limit, max(0, int(round((tau_end - tau0) / h))))
    rows = [s]
    reason = HaltReason.REACHED_END
    detail = ""
    tau = tau0
    halt_tau = tau0
    i = 0
    try:
        k1 = f(s, tau)
        if not _finite(k1):
            reason = HaltReason.NON_FINITE
            limit = 0
        while i < limit:
            halt_tau = tau0 + (i + 1) * h
            new = step(f, s, tau, h, k1)
            if new is None or not _finite(new):
                reason = HaltReason.NON_FINITE
                break
            tau = halt_tau
            k1 = f(new, tau)
            i += 1
            s = new
            rows.append(s)
            if guard is not None and guard(s, tau, k1):
                reason = HaltReason.GUARD_TRIGGERED
                break
            if not _finite(k1):
                reason = HaltReason.NON_FINITE
                break
    except (OverflowError, ZeroDivisionError):
        # plain-float fields raise where IEEE arithmetic would give inf
        reason = HaltReason.NON_FINITE
    except GuardTripped as exc:
        reason = HaltReason.GUARD_TRIGGERED
        detail = str(exc) or "field precondition failed"
    grid = tau0 + h * np.arange(len(rows))
    if reason is not HaltReason.NON_FINITE and not detail:
        halt_tau = float(grid[-1])
    return Trajectory(grid, np.array(rows, dtype=float), reason, float(halt_tau), h, detail)


def rk4_fixed(fld, s0, tau0, h, guard=None, **kwargs) -> Trajectory:
    """Classical four-stage Runge-Kutta. See :func:`integrate`."""
    return integrate(fld, s0, tau0, h, guard, method="rk4", **kwargs)


def euler_fixed(fld, s0, tau0, h, guard=None, **kwargs) -> Trajectory:
    """Explicit Euler. See :func:`integrate`."""
    return integrate(fld, s0, tau0, h, guard, method="euler", **kwargs)


def midpoint_fixed(fld, s0, tau0, h, guard=None, **kwargs) -> Trajectory:
    """Explicit midpoint (order 2). See :func:`integrate`."""
    return integrate(fld, s0, tau0, h, guard, method="midpoint", **kwargs)


def convergence_order(
    fld: VectorField | FieldFn,
    s0: Sequence[float],
    tau_end: float,
    exact: Sequence[float],
    *,
    method: str = "rk4",
    h: float = 0.1,
    tau0: float = 0.0,
) -> float | None:
    """Empirical order ``log2(e_h / e_{h/2})`` from end-point errors.

    Returns:
        The order, or None when both errors are zero.
    """
    exact = np.asarray(exact, dtype=float)
    errs = []
    for step in (h, h / 2):
        traj = integrate(fld, s0, tau0, step, method=method, tau_end=tau_end)
        errs.append(float(np.max(np.abs(traj.states[-1] - exact))))
    if errs[0] == 0.0 and errs[1] == 0.0:
        return None
    if errs[1] == 0.0:
        return math.inf
    return math.log2(errs[0] / errs[1])
