"""Arithmetic-chain tasks whose step correctness is decidable without a model.

A task starts from ``v0`` and applies ``n_steps`` operations; every
intermediate value is distinct and nonzero so that matching an observation
against the chain identifies the step unambiguously.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from fractions import Fraction

from adaswitch.arith import render_value
from adaswitch.data import DatasetRecord

MAX_MAGNITUDE = 100_000

_VERBS = {"+": "Add", "-": "Subtract", "*": "Multiply by", "/": "Divide by"}
_OPS = {v: k for k, v in _VERBS.items()}
_START = re.compile(r"Start with (-?\d+)\.")
_STEP = re.compile(r"(Add|Subtract|Multiply by|Divide by) (\d+)\.")


def apply_op(value: Fraction, op: str, operand: int) -> Fraction:
    if op == "+":
        return value + operand
    if op == "-":
        return value - operand
    if op == "*":
        return value * operand
    return value / operand


def expression(value: Fraction, op: str, operand: int) -> str:
    return f"{render_value(value)}{op}{operand}"


@dataclass(frozen=True)
class SyntheticTask:
    question_id: str
    start: int
    chain: tuple[tuple[str, int], ...]

    @property
    def n_steps(self) -> int:
        return len(self.chain)

    @property
    def values(self) -> tuple[Fraction, ...]:
        vals = [Fraction(self.start)]
        for op, operand in self.chain:
            vals.append(apply_op(vals[-1], op, operand))
        return tuple(vals)

    @property
    def answer(self) -> Fraction:
        return self.values[-1]

    @property
    def question(self) -> str:
        parts = [f"Start with {self.start}."]
        parts += [f"{_VERBS[op]} {operand}." for op, operand in self.chain]
        parts.append("What is the final value?")
        return " ".join(parts)

    @property
    def rationale(self) -> str:
        vals = self.values
        parts = [f"Start with {self.start}."]
        for t, (op, operand) in enumerate(self.chain):
            expr = expression(vals[t], op, operand)
            result = render_value(vals[t + 1])
            parts.append(f"{_VERBS[op]} {operand} to get {result} <<{expr}={result}>>.")
        parts.append(f"The final value is {render_value(vals[-1])}.")
        return " ".join(parts)

    def record(self) -> DatasetRecord:
        return DatasetRecord(self.question_id, self.question, self.rationale, render_value(self.answer))


def parse_task(question: str, question_id: str = "") -> SyntheticTask | None:
    """Recover the task from its rendered question, or ``None``."""
    m = _START.search(question)
    if m is None:
        return None
    chain = tuple((_OPS[verb], int(n)) for verb, n in _STEP.findall(question[m.end() :]))
    if not chain:
        return None
    return SyntheticTask(question_id, int(m.group(1)), chain)


def _next_op(rng: random.Random, value: Fraction, seen: set[Fraction], lo: int, hi: int) -> tuple[str, int] | None:
    for _ in range(50):
        op = rng.choice("+-*/")
        operand = rng.randint(2, 9) if op in "*/" else rng.randint(lo, hi)
        if op == "/" and (value.numerator % operand or value.denominator != 1):
            continue
        new = apply_op(value, op, operand)
        if new == 0 or new in seen or abs(new) > MAX_MAGNITUDE:
            continue
        return op, operand
    return None


def gen_synthetic_tasks(
    count: int,
    n_steps: int,
    value_range: tuple[int, int] = (2, 50),
    seed: int = 0,
    prefix: str = "syn",
) -> list[SyntheticTask]:
    if count < 1 or n_steps < 1:
        raise ValueError("count and n_steps must be >= 1")
    lo, hi = value_range
    rng = random.Random(seed)
    tasks = []
    width = len(str(count - 1))
    while len(tasks) < count:
        start = rng.randint(lo, hi)
        value = Fraction(start)
        seen = {value}
        chain = []
        for _ in range(n_steps):
            nxt = _next_op(rng, value, seen, lo, hi)
            if nxt is None:
                break
            chain.append(nxt)
            value = apply_op(value, *nxt)
            seen.add(value)
        if len(chain) == n_steps:  # otherwise regenerate the whole task
            tasks.append(SyntheticTask(f"{prefix}-{len(tasks):0{width}d}", start, tuple(chain)))
    return tasks
