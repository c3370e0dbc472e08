"""Expression front-end: parser, evaluator, compiler and dual-number partials.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := ['-'] power
    power  := atom ['^' factor]
    atom   := number | ident | func '(' expr ')' | '(' expr ')'

Evaluation follows IEEE-754: poles give ``inf``, a negative base raised to a
non-integer power gives ``nan``. Nothing is trapped.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "DualValue",
    "ExprError",
    "ExprSyntaxError",
    "UnknownFunctionError",
    "MissingBindingError",
    "parse",
    "evaluate",
    "eval_with_partials",
    "unparse",
    "compile_partials",
    "FUNCTIONS",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed input. ``offset`` is the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownFunctionError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown function '{name}' at offset {offset}")
        self.name = name
        self.offset = offset


class MissingBindingError(ExprError, KeyError):
    def __init__(self, names: Iterable[str]):
        self.names = sorted(set(names))
        super().__init__(f"missing binding for: {', '.join(self.names)}")

    def __str__(self) -> str:
        return self.args[0]


# ---------------------------------------------------------------- AST nodes


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

FUNCTIONS = ("exp", "ln", "sin", "cos", "tan", "arctan", "sqrt", "abs")


# ------------------------------------------------------------------ lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[a-zA-Z_][a-zA-Z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num", "ident", "op", "end"
    text: str
    offset: int  # byte offset


def _tokenize(src: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    byte_pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", byte_pos)
        text = m.group()
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, text, byte_pos))
        pos = m.end()
        byte_pos += len(text.encode("utf-8"))
    tokens.append(_Token("end", "", byte_pos))
    return tokens


# ----------------------------------------------------------------- parser


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.peek()
        if tok.text != text or tok.kind != "op":
            found = repr(tok.text) if tok.kind != "end" else "end of input"
            raise ExprSyntaxError(f"expected '{text}', found {found}", tok.offset)
        self.take()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            return Neg(self.power())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Node:
        tok = self.take()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "ident":
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownFunctionError(tok.text, tok.offset)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg)
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = repr(tok.text) if tok.kind != "end" else "end of input"
        raise ExprSyntaxError(f"unexpected {found}", tok.offset)


def _names(node: Node, acc: dict[str, None]) -> None:
    if isinstance(node, Var):
        acc.setdefault(node.name, None)
    elif isinstance(node, Neg):
        _names(node.operand, acc)
    elif isinstance(node, BinOp):
        _names(node.left, acc)
        _names(node.right, acc)
    elif isinstance(node, Call):
        _names(node.arg, acc)


# -------------------------------------------------------- float evaluation

_NP_FUNCS: dict[str, Callable] = {
    "exp": np.exp,
    "ln": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "arctan": np.arctan,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


def _np_eval(node: Node, env: Mapping[str, float]) -> np.float64:
    # caller holds np.errstate(all="ignore")
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Var):
        return np.float64(env[node.name])
    if isinstance(node, Neg):
        return -_np_eval(node.operand, env)
    if isinstance(node, Call):
        return _NP_FUNCS[node.func](_np_eval(node.arg, env))
    a = _np_eval(node.left, env)
    b = _np_eval(node.right, env)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return np.divide(a, b)
    return np.power(a, b)


def _pow(a: float, b: float) -> float:
    if a < 0.0 and b != math.floor(b):
        return math.nan
    return a**b


_MATH_FUNCS = {
    "exp": "math.exp",
    "ln": "math.log",
    "sin": "math.sin",
    "cos": "math.cos",
    "tan": "math.tan",
    "arctan": "math.atan",
    "sqrt": "math.sqrt",
    "abs": "abs",
}


def _codegen(node: Node, names: Mapping[str, str]) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return names[node.name]
    if isinstance(node, Neg):
        return f"(-{_codegen(node.operand, names)})"
    if isinstance(node, Call):
        return f"{_MATH_FUNCS[node.func]}({_codegen(node.arg, names)})"
    left = _codegen(node.left, names)
    right = _codegen(node.right, names)
    if node.op == "^":
        return f"_pow({left}, {right})"
    return f"({left} {node.op} {right})"


# ------------------------------------------------------------------- Expr


@dataclass(frozen=True)
class Expr:
    """Immutable parsed expression.

    Attributes:
        ast: Root node of the expression tree.
        free_vars: Identifiers in order of first appearance, excluding
            declared parameters.
        param_names: Declared parameters that the expression references.
        source: The text the expression was parsed from.
    """

    ast: Node
    free_vars: tuple[str, ...]
    param_names: tuple[str, ...] = ()
    source: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def names(self) -> tuple[str, ...]:
        """All identifiers, variables and parameters alike."""
        return self.free_vars + self.param_names

    def __str__(self) -> str:
        return self.source or unparse(self)

    def evaluate(self, env: Mapping[str, float]) -> float:
        return evaluate(self, env)

    def compile(
        self, argnames: Sequence[str], params: Mapping[str, float] | None = None
    ) -> Callable[..., float]:
        """Compile to a positional Python function of ``argnames``.

        Parameters are frozen into the function as constants. Exceptions
        from Python float arithmetic (division by zero, overflow, domain)
        fall back to the IEEE evaluator, so results match ``evaluate``.

        Raises:
            MissingBindingError: some identifier is neither an argument nor
                a parameter.
        """
        params = dict(params or {})
        argnames = tuple(argnames)
        key = (argnames, tuple(sorted(params.items())))
        fn = self._cache.get(key)
        if fn is not None:
            return fn
        missing = [n for n in self.names if n not in argnames and n not in params]
        if missing:
            raise MissingBindingError(missing)
        local = {name: f"_a{i}" for i, name in enumerate(argnames)}
        consts: dict[str, float] = {}
        for j, name in enumerate(sorted(params)):
            if name not in local:
                local[name] = f"_p{j}"
                consts[f"_p{j}"] = float(params[name])
        args = ", ".join(f"_a{i}" for i in range(len(argnames)))
        body = _codegen(self.ast, local)
        src = (
            f"def _compiled({args}):\n"
            f"    try:\n"
            f"        return {body}\n"
            f"    except (ZeroDivisionError, OverflowError, ValueError):\n"
            f"        return _fallback(({args}{',' if len(argnames) == 1 else ''}))\n"
        )
        ast = self.ast

        def _fallback(values: tuple) -> float:
            env = dict(params)
            env.update(zip(argnames, values))
            with np.errstate(all="ignore"):
                return float(_np_eval(ast, env))

        namespace = {"math": math, "_pow": _pow, "_fallback": _fallback, **consts}
        exec(compile(src, f"<expr {self.source or unparse(self)}>", "exec"), namespace)
        fn = namespace["_compiled"]
        self._cache[key] = fn
        return fn


def parse(src: str, params: Iterable[str] = ()) -> Expr:
    """Parse ``src`` into an :class:`Expr`.

    Args:
        src: Expression text.
        params: Names to treat as bound parameters rather than variables.

    Raises:
        ExprSyntaxError: malformed input, with the byte offset.
        UnknownFunctionError: a call to a function outside ``FUNCTIONS``.
    """
    ast = _Parser(src).parse()
    acc: dict[str, None] = {}
    _names(ast, acc)
    params = set(params)
    free = tuple(n for n in acc if n not in params)
    bound = tuple(n for n in acc if n in params)
    return Expr(ast, free, bound, src)


def _as_expr(e: Expr | str) -> Expr:
    return e if isinstance(e, Expr) else parse(e)


def evaluate(e: Expr | str, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` with every identifier looked up in ``env``.

    Raises:
        MissingBindingError: an identifier has no binding.
    """
    e = _as_expr(e)
    missing = [n for n in e.names if n not in env]
    if missing:
        raise MissingBindingError(missing)
    with np.errstate(all="ignore"):
        out = _np_eval(e.ast, env)
    return float(out) if np.ndim(out) == 0 else out


# -------------------------------------------------------------- unparsing

def unparse(e: Expr | Node) -> str:
    """Render an expression as fully parenthesized text.

    Reparsing the result yields a tree that evaluates identically.
    """
    node = e.ast if isinstance(e, Expr) else e
    return _unparse(node)


def _unparse(node: Node) -> str:
    if isinstance(node, Num):
        text = repr(node.value)
        if text in ("inf", "nan"):
            raise ExprError(f"cannot render non-finite constant {text}")
        return text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_unparse(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({_unparse(node.arg)})"
    return f"({_unparse(node.left)} {node.op} {_unparse(node.right)})"


# ----------------------------------------------------------- dual numbers


@dataclass(frozen=True)
class DualValue:
    """A value with its first partial derivatives.

    Attributes:
        value: The function value.
        partials: One entry per seeded variable.
    """

    value: float
    partials: dict[str, float]


class _Dual:
    __slots__ = ("v", "d")

    def __init__(self, v, d):
        self.v = v
        self.d = d


def _dual_eval(node: Node, env: Mapping[str, float], seeds: dict[str, int], n: int) -> _Dual:
    if isinstance(node, Num):
        return _Dual(np.float64(node.value), np.zeros(n))
    if isinstance(node, Var):
        d = np.zeros(n)
        idx = seeds.get(node.name)
        if idx is not None:
            d[idx] = 1.0
        return _Dual(np.float64(env[node.name]), d)
    if isinstance(node, Neg):
        a = _dual_eval(node.operand, env, seeds, n)
        return _Dual(-a.v, -a.d)
    if isinstance(node, Call):
        a = _dual_eval(node.arg, env, seeds, n)
        v = _NP_FUNCS[node.func](a.v)
        fn = node.func
        if fn == "exp":
            dv = v
        elif fn == "ln":
            dv = 1.0 / a.v
        elif fn == "sin":
            dv = np.cos(a.v)
        elif fn == "cos":
            dv = -np.sin(a.v)
        elif fn == "tan":
            dv = 1.0 / np.cos(a.v) ** 2
        elif fn == "arctan":
            dv = 1.0 / (1.0 + a.v * a.v)
        elif fn == "sqrt":
            dv = 0.5 / v
        else:  # abs; derivative at the kink taken as 0
            dv = np.sign(a.v)
        return _Dual(v, dv * a.d)
    a = _dual_eval(node.left, env, seeds, n)
    b = _dual_eval(node.right, env, seeds, n)
    op = node.op
    if op == "+":
        return _Dual(a.v + b.v, a.d + b.d)
    if op == "-":
        return _Dual(a.v - b.v, a.d - b.d)
    if op == "*":
        return _Dual(a.v * b.v, a.d * b.v + b.d * a.v)
    if op == "/":
        v = np.divide(a.v, b.v)
        return _Dual(v, (a.d - v * b.d) / b.v)
    v = np.power(a.v, b.v)
    if not b.d.any():
        if b.v == 0.0:
            return _Dual(v, np.zeros(n))
        return _Dual(v, b.v * np.power(a.v, b.v - 1.0) * a.d)
    return _Dual(v, v * (b.d * np.log(a.v) + b.v * a.d / a.v))


def eval_with_partials(
    e: Expr | str, env: Mapping[str, float], seeds: Iterable[str]
) -> DualValue:
    """Evaluate ``e`` together with exact partial derivatives.

    Args:
        e: Expression.
        env: Bindings for every identifier in ``e``.
        seeds: Variables to differentiate with respect to. Seeds absent from
            ``e`` get a zero partial.

    Returns:
        The value and a partial for each seed.
    """
    e = _as_expr(e)
    seeds = list(dict.fromkeys(seeds))
    missing = [n for n in e.names if n not in env]
    missing += [s for s in seeds if s not in env]
    if missing:
        raise MissingBindingError(missing)
    index = {name: i for i, name in enumerate(seeds)}
    with np.errstate(all="ignore"):
        out = _dual_eval(e.ast, env, index, len(seeds))
    return DualValue(float(out.v), {s: float(out.d[i]) for s, i in index.items()})


def _dual_codegen(
    node: Node, names: Mapping[str, str], seeds: Mapping[str, int], n: int, lines: list[str]
) -> tuple[str, list[str | None]]:
    """Emit straight-line forward-mode code; ``None`` marks a zero partial."""
    if isinstance(node, Num):
        return repr(node.value), [None] * n
    if isinstance(node, Var):
        d: list[str | None] = [None] * n
        idx = seeds.get(node.name)
        if idx is not None:
            d[idx] = "1.0"
        return names[node.name], d
    if isinstance(node, Neg):
        a, da = _dual_codegen(node.operand, names, seeds, n, lines)
        tmp = f"_t{len(lines)}"
        lines.append(f"{tmp} = -{a}")
        return tmp, [None if x is None else f"(-{x})" for x in da]
    if isinstance(node, Call):
        a, da = _dual_codegen(node.arg, names, seeds, n, lines)
        tmp = f"_t{len(lines)}"
        lines.append(f"{tmp} = {_MATH_FUNCS[node.func]}({a})")
        factor = {
            "exp": tmp,
            "ln": f"(1.0 / {a})",
            "sin": f"math.cos({a})",
            "cos": f"(-math.sin({a}))",
            "tan": f"(1.0 / math.cos({a}) ** 2)",
            "arctan": f"(1.0 / (1.0 + {a} * {a}))",
            "sqrt": f"(0.5 / {tmp})",
            "abs": f"_sign({a})",
        }[node.func]
        return tmp, [None if x is None else f"({factor} * {x})" for x in da]
    a, da = _dual_codegen(node.left, names, seeds, n, lines)
    b, db = _dual_codegen(node.right, names, seeds, n, lines)
    tmp = f"_t{len(lines)}"
    op = node.op
    out: list[str | None] = []
    if op in "+-":
        lines.append(f"{tmp} = {a} {op} {b}")
        for x, y in zip(da, db):
            if x is None and y is None:
                out.append(None)
            elif y is None:
                out.append(x)
            elif x is None:
                out.append(y if op == "+" else f"(-{y})")
            else:
                out.append(f"({x} {op} {y})")
        return tmp, out
    if op == "*":
        lines.append(f"{tmp} = {a} * {b}")
        for x, y in zip(da, db):
            terms = ([f"{x} * {b}"] if x is not None else []) + ([f"{a} * {y}"] if y is not None else [])
            out.append(f"({' + '.join(terms)})" if terms else None)
        return tmp, out
    if op == "/":
        lines.append(f"{tmp} = {a} / {b}")
        for x, y in zip(da, db):
            if x is None and y is None:
                out.append(None)
            else:
                num = (x if x is not None else "0.0") + (f" - {tmp} * {y}" if y is not None else "")
                out.append(f"(({num}) / {b})")
        return tmp, out
    lines.append(f"{tmp} = _pow({a}, {b})")
    if all(y is None for y in db):
        if isinstance(node.right, Num) and node.right.value == 0.0:
            return tmp, [None] * n
        return tmp, [None if x is None else f"({b} * _pow({a}, {b} - 1.0) * {x})" for x in da]
    for x, y in zip(da, db):
        inner = ([f"{y} * math.log({a})"] if y is not None else []) + (
            [f"{b} * {x} / {a}"] if x is not None else []
        )
        out.append(f"({tmp} * ({' + '.join(inner)}))")
    return tmp, out


def _sign(v: float) -> float:
    return 1.0 if v > 0.0 else (-1.0 if v < 0.0 else 0.0)


def compile_partials(
    e: Expr, argnames: Sequence[str], seeds: Sequence[str], params: Mapping[str, float] | None = None
) -> Callable[..., tuple[float, list[float]]]:
    """Compile ``fn(*args) -> (value, [partials in seed order])``.

    Generates straight-line forward-mode code. Arithmetic exceptions fall
    back to the IEEE dual evaluator, as in :meth:`Expr.compile`.
    """
    params = dict(params or {})
    argnames = tuple(argnames)
    missing = [name for name in e.names if name not in argnames and name not in params]
    if missing:
        raise MissingBindingError(missing)
    seeds = tuple(seeds)
    index = {name: i for i, name in enumerate(seeds)}
    n = len(seeds)
    local = {name: f"_a{i}" for i, name in enumerate(argnames)}
    consts: dict[str, float] = {}
    for j, name in enumerate(sorted(params)):
        if name not in local:
            local[name] = f"_p{j}"
            consts[f"_p{j}"] = float(params[name])
    lines: list[str] = []
    value, partials = _dual_codegen(e.ast, local, index, n, lines)
    args = ", ".join(f"_a{i}" for i in range(len(argnames)))
    body = "".join(f"        {line}\n" for line in lines)
    result = ", ".join(p if p is not None else "0.0" for p in partials)
    src = (
        f"def _compiled({args}):\n"
        f"    try:\n{body}"
        f"        return {value}, [{result}]\n"
        f"    except (ZeroDivisionError, OverflowError, ValueError):\n"
        f"        return _fallback(({args}{',' if len(argnames) == 1 else ''}))\n"
    )
    ast = e.ast

    def _fallback(values: tuple) -> tuple[float, list[float]]:
        env = dict(params)
        env.update(zip(argnames, values))
        with np.errstate(all="ignore"):
            out = _dual_eval(ast, env, index, n)
        return float(out.v), [float(x) for x in out.d]

    namespace = {"math": math, "_pow": _pow, "_sign": _sign, "_fallback": _fallback, **consts}
    exec(compile(src, f"<partials {e.source or unparse(e)}>", "exec"), namespace)
    return namespace["_compiled"]
