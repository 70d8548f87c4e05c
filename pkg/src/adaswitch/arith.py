"""Exact rational arithmetic for tool actions.

Expressions are parsed into a small AST and evaluated over
:class:`fractions.Fraction`. Precedence, high to low::

    ^           (left-associative, integer exponents only)
    unary -
    * /
    + -

Identifiers are accepted by the parser so the same grammar serves
``Define``, ``SetEquation`` and ``SolveEquation``; ``Calculator`` rejects
them lexically before evaluation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Context, Decimal
from fractions import Fraction
from typing import Mapping, Union

MAX_BITS = 256
_BOUND = 1 << MAX_BITS

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*|\.\d+)|([A-Za-z_][A-Za-z_0-9]*)|(\S))")
CALCULATOR_CHARS = re.compile(r"^[0-9+\-*/^().\s]*$")


class ExpressionSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EvaluationError(ArithmeticError):
    """Division by zero, non-integer exponent, overflow or unbound name."""


class NonLinearError(EvaluationError):
    pass


@dataclass(frozen=True)
class Num:
    value: Fraction


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


Node = Union[Num, Var, Neg, BinOp]


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # only trailing whitespace left
            break
        if m.group(1) is not None:
            tokens.append(("num", m.group(1), m.start(1)))
        elif m.group(2) is not None:
            tokens.append(("name", m.group(2), m.start(2)))
        else:
            ch = m.group(3)
            if ch not in "+-*/^()":
                raise ExpressionSyntaxError(f"unexpected character {ch!r}", m.start(3))
            tokens.append(("op", ch, m.start(3)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected {value!r}", offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.primary()
        while self.peek()[:2] == ("op", "^"):
            self.take()
            node = BinOp("^", node, self.exponent())
        return node

    def exponent(self) -> Node:
        # allows 2^-1 without letting unary minus outrank ^ elsewhere
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.exponent())
        return self.primary()

    def primary(self) -> Node:
        kind, value, offset = self.take()
        if kind == "num":
            return Num(Fraction(value))
        if kind == "name":
            return Var(value)
        if (kind, value) == ("op", "("):
            node = self.expr()
            kind, value, offset = self.take()
            if (kind, value) != ("op", ")"):
                raise ExpressionSyntaxError("expected ')'", offset)
            return node
        if kind == "end":
            raise ExpressionSyntaxError("unexpected end of expression", offset)
        raise ExpressionSyntaxError(f"unexpected {value!r}", offset)


def parse_expression(text: str) -> Node:
    return _Parser(text).parse()


def free_names(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return free_names(node.operand)
    if isinstance(node, BinOp):
        return free_names(node.left) | free_names(node.right)
    return set()


def _check(value: Fraction) -> Fraction:
    if abs(value.numerator) >= _BOUND or value.denominator >= _BOUND:
        raise EvaluationError(f"result exceeds {MAX_BITS}-bit rational bound")
    return value


def _power(base: Fraction, exp: Fraction) -> Fraction:
    if exp.denominator != 1:
        raise EvaluationError("non-integer exponent")
    n = exp.numerator
    if base == 0 and n < 0:
        raise EvaluationError("division by zero")
    if base not in (0, 1, -1):
        bits = max(abs(base.numerator).bit_length(), base.denominator.bit_length())
        if (bits - 1) * abs(n) > MAX_BITS:
            raise EvaluationError(f"result exceeds {MAX_BITS}-bit rational bound")
    return _check(base**n)


def _apply(op: str, a: Fraction, b: Fraction) -> Fraction:
    if op == "+":
        return _check(a + b)
    if op == "-":
        return _check(a - b)
    if op == "*":
        return _check(a * b)
    if op == "/":
        if b == 0:
            raise EvaluationError("division by zero")
        return _check(a / b)
    return _power(a, b)


def evaluate(node: Node, env: Mapping[str, Fraction] | None = None) -> Fraction:
    if isinstance(node, Num):
        return _check(node.value)
    if isinstance(node, Var):
        if env is None or node.name not in env:
            raise EvaluationError(f"undefined variable {node.name!r}")
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.operand, env)
    return _apply(node.op, evaluate(node.left, env), evaluate(node.right, env))


def eval_expression(text: str, env: Mapping[str, Fraction] | None = None) -> Fraction:
    """Parse and evaluate ``text`` exactly.

    >>> eval_expression("(1/3)*3")
    Fraction(1, 1)
    """
    return evaluate(parse_expression(text), env)


@dataclass(frozen=True)
class Linear:
    """``coef * x + const`` for a single unknown ``x``."""

    coef: Fraction
    const: Fraction


def _linear(node: Node, unknown: str, env: Mapping[str, Fraction]) -> Linear:
    zero = Fraction(0)
    if isinstance(node, Num):
        return Linear(zero, node.value)
    if isinstance(node, Var):
        if node.name == unknown:
            return Linear(Fraction(1), zero)
        if node.name in env:
            return Linear(zero, env[node.name])
        raise NonLinearError(f"more than one unknown ({unknown!r}, {node.name!r})")
    if isinstance(node, Neg):
        inner = _linear(node.operand, unknown, env)
        return Linear(-inner.coef, -inner.const)
    a = _linear(node.left, unknown, env)
    b = _linear(node.right, unknown, env)
    if node.op == "+":
        return Linear(_check(a.coef + b.coef), _check(a.const + b.const))
    if node.op == "-":
        return Linear(_check(a.coef - b.coef), _check(a.const - b.const))
    if node.op == "*":
        if a.coef and b.coef:
            raise NonLinearError("product of unknown terms")
        return Linear(_check(a.coef * b.const + b.coef * a.const), _check(a.const * b.const))
    if node.op == "/":
        if b.coef:
            raise NonLinearError("unknown in denominator")
        if b.const == 0:
            raise EvaluationError("division by zero")
        return Linear(_check(a.coef / b.const), _check(a.const / b.const))
    if b.coef:
        raise NonLinearError("unknown in exponent")
    if a.coef == 0:
        return Linear(zero, _power(a.const, b.const))
    if b.const == 1:
        return a
    if b.const == 0:
        return Linear(zero, Fraction(1))
    raise NonLinearError("power of unknown")


def linear_form(text: str, unknown: str, env: Mapping[str, Fraction] | None = None) -> Linear:
    return _linear(parse_expression(text), unknown, env or {})


def render_value(value: Fraction, digits: int = 10) -> str:
    """Integers without a point, otherwise ``digits`` significant digits."""
    if value.denominator == 1:
        return str(value.numerator)
    ctx = Context(prec=digits)
    dec = ctx.divide(Decimal(value.numerator), Decimal(value.denominator))
    text = format(dec, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text
