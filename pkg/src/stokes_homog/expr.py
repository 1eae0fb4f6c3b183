"""Small arithmetic expression language for periodic coefficient data.

Grammar (lowest to highest binding)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

``^`` is right associative and binds tighter than unary minus, so ``-2^2``
is ``-(2^2)``.  Expressions are immutable trees; :func:`compile_expr`
turns one into a vectorised numpy callable.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
}
CONSTANTS = {"pi": math.pi}
CELL_VARIABLES = ("y1", "y2")
TWO_SCALE_VARIABLES = ("x1", "x2", "y1", "y2")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class EvalError(ArithmeticError):
    """Raised when evaluation hits a zero denominator or a non-finite value."""

    def __init__(self, message: str, point: Mapping[str, float]):
        where = ", ".join(f"{k}={v!r}" for k, v in point.items())
        super().__init__(f"{message} at ({where})")
        self.point = dict(point)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Name, Unary, Binary, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Iterable[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = frozenset(variables)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = Binary(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Unary("-", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(text, pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in CONSTANTS or text in self.variables:
                return Name(text)
            raise UnknownIdentifierError(text, pos)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse_expr(text: str, variables: Iterable[str] = CELL_VARIABLES) -> Expr:
    """Parse ``text`` into an expression tree.

    ``variables`` lists the admissible free names; ``pi`` is always known.
    """
    return _Parser(text, variables).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary):
        return _PREC["neg"]
    return 5


def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_string(e: Expr) -> str:
    """Render ``e`` with the minimal parentheses that re-parse to the same tree."""
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    if isinstance(e, Unary):
        inner = to_string(e.operand)
        if _prec(e.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[e.op]
    left, right = to_string(e.left), to_string(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


def free_names(e: Expr) -> set[str]:
    if isinstance(e, Name):
        return set() if e.id in CONSTANTS else {e.id}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Unary):
        return free_names(e.operand)
    if isinstance(e, Call):
        return free_names(e.arg)
    return free_names(e.left) | free_names(e.right)


def _first_point(env: Mapping[str, np.ndarray], mask: np.ndarray) -> dict[str, float]:
    arrays = [np.asarray(v, dtype=float) for v in env.values()]
    shape = np.broadcast_shapes(np.shape(mask), *(a.shape for a in arrays))
    first = tuple(np.argwhere(np.broadcast_to(mask, shape))[0]) if shape else ()
    return {k: float(np.broadcast_to(a, shape)[first]) for k, a in zip(env, arrays)}


def _build(e: Expr):
    if isinstance(e, Num):
        v = e.value
        return lambda env: v
    if isinstance(e, Name):
        if e.id in CONSTANTS:
            c = CONSTANTS[e.id]
            return lambda env: c
        key = e.id
        return lambda env: env[key]
    if isinstance(e, Call):
        fn = FUNCTIONS[e.func]
        arg = _build(e.arg)
        return lambda env: fn(arg(env))
    if isinstance(e, Unary):
        arg = _build(e.operand)
        return lambda env: -arg(env)
    lhs, rhs = _build(e.left), _build(e.right)
    if e.op == "+":
        return lambda env: lhs(env) + rhs(env)
    if e.op == "-":
        return lambda env: lhs(env) - rhs(env)
    if e.op == "*":
        return lambda env: lhs(env) * rhs(env)
    if e.op == "/":
        def div(env):
            den = np.asarray(rhs(env), dtype=float)
            zero = den == 0.0
            if np.any(zero):
                raise EvalError("division by zero", _first_point(env, zero))
            return lhs(env) / den
        return div

    def power(env):
        with np.errstate(all="ignore"):
            return np.power(np.asarray(lhs(env), dtype=float), rhs(env))
    return power


def compile_expr(e: Expr) -> Callable[..., np.ndarray]:
    """Return ``f(**arrays)`` evaluating ``e`` elementwise with broadcasting.

    The result always has the broadcast shape of the inputs, so constant
    expressions still yield full arrays.
    """
    body = _build(e)
    names = free_names(e)

    def f(**env):
        missing = names - env.keys()
        if missing:
            raise KeyError(f"missing values for {sorted(missing)}")
        arrays = {k: np.asarray(v, dtype=float) for k, v in env.items()}
        shape = np.broadcast(*arrays.values()).shape if arrays else ()
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(body(arrays), dtype=float), shape).copy()
        bad = ~np.isfinite(out)
        if np.any(bad):
            raise EvalError("non-finite value", _first_point(arrays, bad))
        return out

    return f


def eval_expr(e: Expr, y) -> float:
    """Evaluate ``e`` at a single point ``y = (y1, y2)``."""
    y1, y2 = (float(v) for v in y)
    return float(compile_expr(e)(y1=y1, y2=y2))
