"""Tool-action grammar, parser and offline executor.

Surface form is ``Name(arg, ...)``. Single-argument actions keep the whole
inner text as their argument (commas included); ``Count`` splits on
top-level commas and ``Define`` on the first top-level comma.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from adaswitch.arith import (
    CALCULATOR_CHARS,
    EvaluationError,
    ExpressionSyntaxError,
    NonLinearError,
    eval_expression,
    free_names,
    linear_form,
    parse_expression,
    render_value,
)

SINGLE_ARG = (
    "Calculator",
    "SetEquation",
    "SolveEquation",
    "SolveInequality",
    "Code",
    "KnowledgeQuery",
    "ParagraphRetrieval",
    "QA",
    "Finish",
)
ACTION_NAMES = SINGLE_ARG + ("Define", "Count")

_NAME = re.compile(r"\s*([A-Za-z_][A-Za-z_0-9]*)\s*")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z_0-9]*$")


class ActionParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.reason = message
        self.offset = offset


@dataclass(frozen=True)
class Action:
    name: str
    args: tuple[str, ...]

    @property
    def arg(self) -> str:
        return self.args[0] if self.args else ""

    @property
    def is_finish(self) -> bool:
        return self.name == "Finish"

    def __str__(self) -> str:
        return render_action(self)


def calculator(expr: str) -> Action:
    return Action("Calculator", (expr,))


def finish(answer: str) -> Action:
    return Action("Finish", (answer,))


def _split_top_level(text: str, base: int, maxsplit: int = -1) -> list[tuple[str, int]]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0 and (maxsplit < 0 or len(parts) < maxsplit):
            parts.append((text[start:i], base + start))
            start = i + 1
    parts.append((text[start:], base + start))
    return parts


def parse_action(text: str) -> Action:
    """Parse one action; raises :class:`ActionParseError` with a byte offset."""
    m = _NAME.match(text)
    if m is None:
        raise ActionParseError("expected action name", 0)
    name = m.group(1)
    if name not in ACTION_NAMES:
        raise ActionParseError(f"unknown action {name!r}", m.start(1))
    pos = m.end()
    if pos >= len(text) or text[pos] != "(":
        raise ActionParseError("expected '('", pos)
    depth = 0
    close = -1
    for i in range(pos, len(text)):
        if text[i] == "(":
            depth += 1
        elif text[i] == ")":
            depth -= 1
            if depth == 0:
                close = i
                break
    if close < 0:
        raise ActionParseError("unbalanced parentheses", len(text))
    if text[close + 1 :].strip():
        raise ActionParseError("trailing text after action", close + 1)
    inner = text[pos + 1 : close]
    base = pos + 1

    if name in SINGLE_ARG:
        arg = inner.strip()
        if name == "Calculator":
            bad = next((i for i, ch in enumerate(inner) if not CALCULATOR_CHARS.match(ch)), None)
            if bad is not None:
                raise ActionParseError("invalid character in Calculator expression", base + bad)
        if name == "SolveEquation" and "=" not in arg and not _IDENT.match(arg):
            raise ActionParseError("SolveEquation expects a variable or an equation", base)
        return Action(name, (arg,))

    if name == "Count":
        if not inner.strip():
            return Action(name, ())
        items = _split_top_level(inner, base)
        for item, off in items:
            if not item.strip():
                raise ActionParseError("empty list item", off)
        return Action(name, tuple(item.strip() for item, _ in items))

    parts = _split_top_level(inner, base, maxsplit=1)
    if len(parts) != 2:
        raise ActionParseError("Define expects (variable, value)", base)
    (var, var_off), (value, value_off) = parts
    if not _IDENT.match(var.strip()):
        raise ActionParseError("invalid variable name", var_off)
    if not value.strip():
        raise ActionParseError("missing value", value_off)
    return Action(name, (var.strip(), value.strip()))


def render_action(action: Action) -> str:
    return f"{action.name}({', '.join(action.args)})"


@dataclass(frozen=True)
class ToolContext:
    defined_vars: Mapping[str, Fraction] = field(default_factory=dict)
    equations: tuple[str, ...] = ()
    knowledge_store: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    qa_table: Mapping[str, str] = field(default_factory=dict)

    def passages_for(self, entity: str) -> tuple[str, ...]:
        return self.knowledge_store.get(entity.strip().lower(), ())


def normalize_query(text: str) -> str:
    text = re.sub(r"[^\w\s]", " ", text.lower())
    return " ".join(text.split())


def _tokens(text: str) -> set[str]:
    return set(normalize_query(text).split())


def load_knowledge(path: str | Path) -> dict[str, tuple[str, ...]]:
    store: dict[str, tuple[str, ...]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            key = rec["entity"].strip().lower()
            store[key] = store.get(key, ()) + tuple(rec["passages"])
    return store


def load_qa(path: str | Path) -> dict[str, str]:
    table = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            table[normalize_query(rec["query"])] = rec["answer"]
    return table


def make_context(knowledge_path: str | None = None, qa_path: str | None = None) -> ToolContext:
    return ToolContext(
        knowledge_store=load_knowledge(knowledge_path) if knowledge_path else {},
        qa_table=load_qa(qa_path) if qa_path else {},
    )


def _split_equation(text: str) -> tuple[str, str]:
    if text.count("=") != 1:
        raise EvaluationError(f"not a single equation: {text!r}")
    lhs, rhs = text.split("=")
    return lhs, rhs


def solve_linear(equation: str, unknown: str, env: Mapping[str, Fraction]) -> Fraction:
    lhs, rhs = _split_equation(equation)
    a = linear_form(lhs, unknown, env)
    b = linear_form(rhs, unknown, env)
    coef = a.coef - b.coef
    if coef == 0:
        raise NonLinearError(f"no unique solution for {unknown!r}")
    return (b.const - a.const) / coef


def _unknowns(text: str, env: Mapping[str, Fraction]) -> set[str]:
    names: set[str] = set()
    for side in re.split(r"<=|>=|=|<|>", text):
        names |= free_names(parse_expression(side))
    return names - set(env)


def _solve_equation(arg: str, ctx: ToolContext) -> str:
    env = dict(ctx.defined_vars)
    if "=" in arg:
        unknowns = _unknowns(arg, env)
        if len(unknowns) != 1:
            raise NonLinearError(f"expected one unknown, found {sorted(unknowns) or 'none'}")
        target = unknowns.pop()
        equation = arg
    else:
        target = arg.strip()
        candidates = [eq for eq in ctx.equations if target in _unknowns(eq, env)]
        if not candidates:
            raise EvaluationError(f"no stored equation mentions {target!r}")
        equation = candidates[-1]
        extra = _unknowns(equation, env) - {target}
        if extra:
            raise NonLinearError(f"more than one unknown ({', '.join(sorted(extra | {target}))})")
    return f"{target} = {render_value(solve_linear(equation, target, env))}"


_INEQ = re.compile(r"(<=|>=|<|>)")
_FLIP = {"<": ">", ">": "<", "<=": ">=", ">=": "<="}


def _solve_inequality(arg: str, ctx: ToolContext) -> str:
    parts = _INEQ.split(arg)
    if len(parts) != 3:
        raise EvaluationError(f"not a single inequality: {arg!r}")
    lhs, op, rhs = parts
    env = dict(ctx.defined_vars)
    unknowns = _unknowns(arg, env)
    if len(unknowns) != 1:
        raise NonLinearError(f"expected one unknown, found {sorted(unknowns) or 'none'}")
    x = unknowns.pop()
    a = linear_form(lhs, x, env)
    b = linear_form(rhs, x, env)
    coef = a.coef - b.coef
    if coef == 0:
        raise NonLinearError(f"{x!r} cancels out")
    bound = (b.const - a.const) / coef
    if coef < 0:
        op = _FLIP[op]
    return f"{x} {op} {render_value(bound)}"


def _retrieve(query: str, ctx: ToolContext) -> str:
    q = _tokens(query)
    best, best_score = None, 0.0
    for passages in ctx.knowledge_store.values():
        for passage in passages:
            if not q:
                break
            score = len(q & _tokens(passage)) / len(q)
            if score > best_score:
                best, best_score = passage, score
    return best if best is not None else "no paragraph found"


def execute(action: Action, ctx: ToolContext) -> tuple[str, ToolContext]:
    """Run ``action`` against ``ctx``; returns ``(observation, new_ctx)``.

    Tool failures come back as ``"tool error: ..."`` observations, never as
    exceptions, so a bad step cannot abort a trajectory.
    """
    try:
        return _execute(action, ctx)
    except (EvaluationError, ExpressionSyntaxError, ZeroDivisionError) as exc:
        return f"tool error: {exc}", ctx


def _execute(action: Action, ctx: ToolContext) -> tuple[str, ToolContext]:
    name, arg = action.name, action.arg
    if name == "Calculator":
        return render_value(eval_expression(arg)), ctx
    if name == "SetEquation":
        _split_equation(arg)
        return arg, replace(ctx, equations=ctx.equations + (arg,))
    if name == "Define":
        var, expr = action.args
        if var in ctx.defined_vars:
            raise EvaluationError(f"variable {var!r} already defined")
        value = eval_expression(expr, ctx.defined_vars)
        return f"{var} = {render_value(value)}", replace(ctx, defined_vars={**ctx.defined_vars, var: value})
    if name == "SolveEquation":
        return _solve_equation(arg, ctx), ctx
    if name == "SolveInequality":
        return _solve_inequality(arg, ctx), ctx
    if name == "Count":
        return str(len(action.args)), ctx
    if name == "KnowledgeQuery":
        passages = ctx.passages_for(arg)
        return (" ".join(passages) if passages else "no knowledge found"), ctx
    if name == "ParagraphRetrieval":
        return _retrieve(arg, ctx), ctx
    if name == "QA":
        return ctx.qa_table.get(normalize_query(arg), "unknown"), ctx
    if name == "Finish":
        return arg, ctx
    return f"unsupported action: {name}", ctx
