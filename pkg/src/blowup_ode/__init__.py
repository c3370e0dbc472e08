"""Numerical integration of blow-up ODE problems via regularizing transformations."""

from __future__ import annotations

from .driver import SolveReport, StopPolicy, naive_failure_demo, solve, solve_two_stage
from .expr import Expr, evaluate, parse
from .problems import REGISTRY, ExactSolution, Kind, Problem, make_problem, registry_get
from .transforms import Method, ParametricSolution, TransformSpec, build, decode, reconstruct_on_x

__all__ = [
    "Expr",
    "parse",
    "evaluate",
    "Kind",
    "Problem",
    "ExactSolution",
    "REGISTRY",
    "make_problem",
    "registry_get",
    "Method",
    "TransformSpec",
    "ParametricSolution",
    "build",
    "decode",
    "reconstruct_on_x",
    "StopPolicy",
    "SolveReport",
    "solve",
    "solve_two_stage",
    "naive_failure_demo",
]
