"""Rule-based step labelling against correct reference trajectories."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from adaswitch.metrics import parse_number, within_tolerance
from adaswitch.trajectory import Label, Outcome, Step, Trajectory

StepPair = tuple[str, str]  # (thought, action_text)


class OracleError(ValueError):
    pass


class Judge:
    """Decides whether a candidate (thought, action) matches a reference step."""

    def equivalent(self, candidate: StepPair, reference: StepPair) -> bool:
        raise NotImplementedError

    def any_equivalent(self, candidate: StepPair, references: Sequence[StepPair]) -> bool:
        return any(self.equivalent(candidate, ref) for ref in references)


def normalize_action(text: str) -> str:
    text = re.sub(r"[^\w\s]", " ", text.lower())
    return " ".join(text.split())


class NormalizedActionJudge(Judge):
    """Default: normalized equality of the action text."""

    def equivalent(self, candidate: StepPair, reference: StepPair) -> bool:
        return normalize_action(candidate[1]) == normalize_action(reference[1])

    def any_equivalent(self, candidate: StepPair, references: Sequence[StepPair]) -> bool:
        key = normalize_action(candidate[1])
        return any(key == normalize_action(ref[1]) for ref in references)


class CallableJudge(Judge):
    def __init__(self, fn: Callable[[StepPair, StepPair], bool]):
        self.fn = fn

    def equivalent(self, candidate: StepPair, reference: StepPair) -> bool:
        return bool(self.fn(candidate, reference))


@dataclass
class ReferenceSet:
    mode: str
    values: set[Fraction] = field(default_factory=set)
    reference_steps: list[StepPair] = field(default_factory=list)
    tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.mode not in ("math", "text"):
            raise OracleError(f"unknown oracle mode {self.mode!r}")
        if self.tolerance <= 0:
            raise OracleError("tolerance must be > 0")

    def add(self, traj: Trajectory) -> None:
        for step in traj.active_steps:
            if self.mode == "math":
                value = parse_number(step.observation)
                if value is not None:
                    self.values.add(value)
            else:
                pair = (step.thought, step.action_text)
                if pair not in self.reference_steps:
                    self.reference_steps.append(pair)


def build_reference(trajectories: Iterable[Trajectory], mode: str = "math", tolerance: float = 1e-6) -> ReferenceSet:
    trajectories = list(trajectories)
    if not trajectories:
        raise OracleError("no reference trajectories")
    ref = ReferenceSet(mode, tolerance=tolerance)
    for traj in trajectories:
        if traj.outcome is not Outcome.CORRECT:
            raise OracleError(f"reference trajectory {traj.question_id!r} is not correct")
        ref.add(traj)
    return ref


@dataclass(frozen=True)
class Verdict:
    label: Label
    reason: str = ""


def check_step(step: Step, ref: ReferenceSet, judge: Judge | None = None) -> Verdict:
    if ref.mode == "math":
        value = parse_number(step.observation)
        if value is None:
            return Verdict(Label.WRONG, "non-numeric")
        if any(within_tolerance(value, r, ref.tolerance) for r in ref.values):
            return Verdict(Label.CORRECT)
        return Verdict(Label.WRONG, "no matching intermediate value")
    judge = judge or NormalizedActionJudge()
    if judge.any_equivalent((step.thought, step.action_text), ref.reference_steps):
        return Verdict(Label.CORRECT)
    return Verdict(Label.WRONG, "no equivalent reference step")


def label_trajectory(traj: Trajectory, ref: ReferenceSet, judge: Judge | None = None) -> Trajectory:
    steps = tuple(
        step if step.erased else replace(step, oracle_label=check_step(step, ref, judge).label)
        for step in traj.steps
    )
    return replace(traj, steps=steps)
