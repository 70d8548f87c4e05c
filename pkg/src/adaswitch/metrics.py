"""Cost accounting, answer grading and self-check detection metrics."""

from __future__ import annotations

import math
import re
import string
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable

from adaswitch.trajectory import Label, Step

TokenEstimator = Callable[[str], int]

_NUMBER = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?(/\d+)?$")
_BINDING = re.compile(r"^\s*[A-Za-z_][A-Za-z_0-9]*\s*=\s*(\S+)\s*$")
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def estimate_tokens(text: str) -> int:
    """Default tokenizer-free estimate: one token per four UTF-8 bytes."""
    return -(-len(text.encode("utf-8")) // 4)


def flops_for_call(param_count: float, prompt_tokens: int, generated_tokens: int) -> float:
    return 2.0 * param_count * (prompt_tokens + generated_tokens)


def parse_number(text: str) -> Fraction | None:
    """Read a numeric observation or answer exactly; ``None`` if it is not one.

    Accepts plain numbers (``"1,200"``, ``"$3.50"``, ``"12.0"``, ``"1/3"``)
    and single solution bindings such as ``"x = 3"``.
    """
    s = text.strip()
    m = _BINDING.match(s)
    if m:
        s = m.group(1)
    s = s.replace(",", "").lstrip("$").rstrip("%").strip()
    if not _NUMBER.match(s):
        return None
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None


def within_tolerance(value: Fraction, reference: Fraction, tol: float) -> bool:
    return abs(value - reference) <= Fraction(tol) * max(Fraction(1), abs(reference))


def normalize_text_answer(text: str) -> str:
    text = text.lower()
    text = "".join(ch for ch in text if ch not in set(string.punctuation))
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def grade_answer(predicted: str | None, gold: str, mode: str = "math", tol: float = 1e-6) -> bool:
    if predicted is None:
        return False
    if mode == "math":
        p, g = parse_number(predicted), parse_number(gold)
        if p is None or g is None:
            return False
        return within_tolerance(p, g, tol)
    return normalize_text_answer(predicted) == normalize_text_answer(gold)


@dataclass
class AgentUsage:
    param_count: float
    calls: int = 0
    prompt_tokens: int = 0
    generated_tokens: int = 0
    flops: float = 0.0

    def add(self, prompt_tokens: int, generated_tokens: int) -> None:
        self.calls += 1
        self.prompt_tokens += prompt_tokens
        self.generated_tokens += generated_tokens
        self.flops += flops_for_call(self.param_count, prompt_tokens, generated_tokens)


@dataclass
class CostReport:
    agents: dict[str, AgentUsage] = field(default_factory=dict)

    def charge(self, agent: str, param_count: float, prompt_tokens: int, generated_tokens: int) -> None:
        usage = self.agents.setdefault(agent, AgentUsage(param_count))
        usage.add(prompt_tokens, generated_tokens)

    @property
    def total_flops(self) -> float:
        return sum(u.flops for u in self.agents.values())

    @property
    def calls(self) -> int:
        return sum(u.calls for u in self.agents.values())

    def merge(self, other: "CostReport") -> "CostReport":
        out = CostReport({k: AgentUsage(**vars(v)) for k, v in self.agents.items()})
        for name, u in other.agents.items():
            mine = out.agents.setdefault(name, AgentUsage(u.param_count))
            mine.calls += u.calls
            mine.prompt_tokens += u.prompt_tokens
            mine.generated_tokens += u.generated_tokens
            mine.flops += u.flops
        return out

    def to_json(self) -> dict:
        return {
            "agents": {
                name: {
                    "calls": u.calls,
                    "prompt_tokens": u.prompt_tokens,
                    "generated_tokens": u.generated_tokens,
                    "flops": u.flops,
                }
                for name, u in sorted(self.agents.items())
            },
            "total_flops": self.total_flops,
        }


@dataclass(frozen=True)
class ConfusionReport:
    """Positives are steps whose ground-truth label is *correct*."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def tnr(self) -> float | None:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else None

    def to_json(self) -> dict:
        return {"TP": self.tp, "FP": self.fp, "TN": self.tn, "FN": self.fn, "TPR": self.tpr, "TNR": self.tnr}


# Reference points for annotation only; they come from trained models.
REFERENCE_DETECTION = {
    "rule_labels": (0.92, 0.61),
    "adaswitch": (0.82, 0.52),
    "confidence_switch": (0.73, 0.27),
}


def detection_confusion(steps: Iterable[Step], threshold: float) -> ConfusionReport:
    """Score error-probability predictions against oracle labels.

    A step is predicted *correct* iff ``error_prob < threshold``, the same
    rule the adaptive policy uses to keep a step.
    """
    tp = fp = tn = fn = 0
    for step in steps:
        if step.oracle_label is None or step.error_prob is None:
            raise ValueError(f"step {step.index} lacks a label or an error probability")
        predicted_correct = step.error_prob < threshold
        if step.oracle_label is Label.CORRECT:
            tp += predicted_correct
            fn += not predicted_correct
        else:
            fp += predicted_correct
            tn += not predicted_correct
    return ConfusionReport(tp, fp, tn, fn)


def mean(values: Iterable[float]) -> float:
    vals = list(values)
    return math.fsum(vals) / len(vals) if vals else 0.0


@dataclass(frozen=True)
class BatchSummary:
    n: int
    accuracy: float
    mean_flops: float
    total_flops: float
    escalation_rate: float
    escalations: int
    failures: int

    def to_json(self) -> dict:
        return dict(vars(self))


def summarize(results) -> BatchSummary:
    """Aggregate a list of run results.

    ``escalation_rate`` is escalations per policy decision; failed runs count
    as wrong.
    """
    results = list(results)
    n = len(results)
    flops = [r.cost.total_flops for r in results]
    escalations = sum(r.escalation_count for r in results)
    decisions = sum(r.decisions for r in results)
    return BatchSummary(
        n=n,
        accuracy=sum(r.correct for r in results) / n if n else 0.0,
        mean_flops=mean(flops),
        total_flops=math.fsum(flops),
        escalation_rate=escalations / decisions if decisions else 0.0,
        escalations=escalations,
        failures=sum(r.error is not None for r in results),
    )
