"""Interaction trajectories: data model, canonical text, erasure, masking.

A trajectory renders as::

    Question: <question>
    Thought 0: <thought>
    Action 0: <action>
    Observation 0: <observation>
    Check 0: OK

``Check`` lines appear only in the revised form (``include_erased=True``) and
only when the trajectory carries verdicts, i.e. some step was erased or
labelled by the step oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator


class Author(str, Enum):
    LOCAL = "local"
    CLOUD = "cloud"
    GOLD = "gold"


class Label(str, Enum):
    CORRECT = "correct"
    WRONG = "wrong"


class Outcome(str, Enum):
    CORRECT = "correct"
    WRONG = "wrong"
    UNANSWERED = "unanswered"


class SegmentKind(str, Enum):
    HEADER = "header"
    THOUGHT = "thought"
    ACTION = "action"
    OBSERVATION = "observation"
    VERDICT = "verdict"


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    index: int
    author: Author
    thought: str
    action_text: str
    observation: str = ""
    error_prob: float | None = None
    oracle_label: Label | None = None
    erased: bool = False

    def __post_init__(self) -> None:
        if self.error_prob is not None and not 0.0 <= self.error_prob <= 1.0:
            raise TrajectoryError(f"error_prob {self.error_prob} outside [0, 1]")
        if self.author is Author.GOLD and self.error_prob is not None:
            raise TrajectoryError("gold steps carry no error_prob")

    @property
    def is_finish(self) -> bool:
        from adaswitch.actions import ActionParseError, parse_action

        try:
            return parse_action(self.action_text).is_finish
        except ActionParseError:
            return False


@dataclass(frozen=True)
class Trajectory:
    question_id: str
    question: str
    steps: tuple[Step, ...] = ()
    final_answer: str | None = None
    outcome: Outcome = Outcome.UNANSWERED

    @property
    def active_steps(self) -> tuple[Step, ...]:
        return tuple(s for s in self.steps if not s.erased)

    @property
    def last_active(self) -> Step | None:
        active = self.active_steps
        return active[-1] if active else None

    @property
    def next_index(self) -> int:
        return len(self.active_steps)

    @property
    def has_verdicts(self) -> bool:
        return any(s.erased or s.oracle_label is not None for s in self.steps)

    def append(self, step: Step) -> "Trajectory":
        if step.index != self.next_index:
            raise TrajectoryError(f"step index {step.index} != expected {self.next_index}")
        return replace(self, steps=self.steps + (step,))

    def replace_last(self, **changes: Any) -> "Trajectory":
        return replace(self, steps=self.steps[:-1] + (replace(self.steps[-1], **changes),))

    def validate(self) -> None:
        for expected, step in enumerate(self.active_steps):
            if step.index != expected:
                raise TrajectoryError(f"non-erased indices not contiguous at {step.index}")
        last = self.last_active
        finished = last is not None and last.is_finish
        if finished != (self.final_answer is not None):
            raise TrajectoryError("final_answer must be present iff the last step is Finish")
        if (self.outcome is Outcome.UNANSWERED) != (self.final_answer is None):
            raise TrajectoryError("outcome=unanswered iff final_answer is absent")


def _step_lines(step: Step) -> list[tuple[SegmentKind, str]]:
    i = step.index
    return [
        (SegmentKind.THOUGHT, f"Thought {i}: {step.thought}\n"),
        (SegmentKind.ACTION, f"Action {i}: {step.action_text}\n"),
        (SegmentKind.OBSERVATION, f"Observation {i}: {step.observation}\n"),
    ]


def header(question: str) -> str:
    return f"Question: {question}\n"


def verdict_line(index: int, wrong: bool) -> str:
    return f"Check {index}: {'WRONG' if wrong else 'OK'}\n"


def _pieces(traj: Trajectory, include_erased: bool) -> Iterator[tuple[SegmentKind, str, Step | None]]:
    yield SegmentKind.HEADER, header(traj.question), None
    verdicts = include_erased and traj.has_verdicts
    for step in traj.steps:
        if step.erased and not include_erased:
            continue
        for kind, text in _step_lines(step):
            yield kind, text, step
        if verdicts:
            yield SegmentKind.VERDICT, verdict_line(step.index, step.erased), step


def serialize_trajectory(traj: Trajectory, include_erased: bool = False) -> str:
    return "".join(text for _, text, _ in _pieces(traj, include_erased))


def erase_step(traj: Trajectory, index: int) -> Trajectory:
    """Mark the last non-erased step as erased so it can be regenerated."""
    last = traj.last_active
    if last is None or last.index != index:
        raise TrajectoryError(f"step {index} is not the last non-erased step")
    pos = max(i for i, s in enumerate(traj.steps) if not s.erased)
    steps = list(traj.steps)
    steps[pos] = replace(last, erased=True)
    return replace(traj, steps=tuple(steps), final_answer=None, outcome=Outcome.UNANSWERED)


@dataclass(frozen=True)
class Segment:
    text: str
    loss_masked: bool
    kind: SegmentKind


@dataclass(frozen=True)
class TrainingExample:
    question_id: str
    segments: tuple[Segment, ...] = field(default_factory=tuple)

    @property
    def text(self) -> str:
        return "".join(s.text for s in self.segments)

    def to_json(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "segments": [
                {"text": s.text, "mask": s.loss_masked, "kind": s.kind.value} for s in self.segments
            ],
        }


def segment_for_training(traj: Trajectory) -> TrainingExample:
    segments = []
    for kind, text, step in _pieces(traj, include_erased=True):
        if kind in (SegmentKind.HEADER, SegmentKind.OBSERVATION):
            masked = True
        elif kind is SegmentKind.VERDICT:
            masked = False
        else:
            masked = step is not None and step.erased
        segments.append(Segment(text, masked, kind))
    return TrainingExample(traj.question_id, tuple(segments))


def step_to_json(step: Step) -> dict[str, Any]:
    out: dict[str, Any] = {
        "index": step.index,
        "author": step.author.value,
        "thought": step.thought,
        "action": step.action_text,
        "observation": step.observation,
    }
    if step.error_prob is not None:
        out["error_prob"] = step.error_prob
    if step.oracle_label is not None:
        out["oracle_label"] = step.oracle_label.value
    out["erased"] = step.erased
    return out


def step_from_json(obj: dict[str, Any]) -> Step:
    label = obj.get("oracle_label")
    return Step(
        index=int(obj["index"]),
        author=Author(obj["author"]),
        thought=obj["thought"],
        action_text=obj["action"],
        observation=obj["observation"],
        error_prob=obj.get("error_prob"),
        oracle_label=Label(label) if label is not None else None,
        erased=bool(obj["erased"]),
    )


def trajectory_to_json(traj: Trajectory) -> dict[str, Any]:
    out: dict[str, Any] = {
        "question_id": traj.question_id,
        "question": traj.question,
        "steps": [step_to_json(s) for s in traj.steps],
    }
    if traj.final_answer is not None:
        out["final_answer"] = traj.final_answer
    out["outcome"] = traj.outcome.value
    return out


def trajectory_from_json(obj: dict[str, Any]) -> Trajectory:
    return Trajectory(
        question_id=str(obj["question_id"]),
        question=obj["question"],
        steps=tuple(step_from_json(s) for s in obj["steps"]),
        final_answer=obj.get("final_answer"),
        outcome=Outcome(obj["outcome"]),
    )


def dumps(obj: dict[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=False)


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps(row) + "\n")


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    write_jsonl(path, (trajectory_to_json(t) for t in trajectories))


def read_trajectories(path: str | Path) -> list[Trajectory]:
    return [trajectory_from_json(row) for row in read_jsonl(path)]
