"""Training-data stages: rationale compilation, collaborative examination, export.

* ``compile_rationale`` turns a gold rationale with ``<<expr=value>>``
  annotations into a trajectory (self-practicing data).
* ``run_examination`` samples local-agent trajectories, labels every local
  step with the step oracle and lets the cloud agent replace wrong steps.
* ``emit_training_sets`` writes both sets with loss masks.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from adaswitch.actions import ActionParseError, ToolContext, execute, finish, parse_action
from adaswitch.arith import CALCULATOR_CHARS, EvaluationError, ExpressionSyntaxError, eval_expression, render_value
from adaswitch.backends import Agent, AgentProfile, BackendError, MalformedStepError, make_agent
from adaswitch.data import DatasetRecord
from adaswitch.metrics import grade_answer, parse_number
from adaswitch.oracle import Judge, ReferenceSet, build_reference, check_step
from adaswitch.seeding import derive_seed
from adaswitch.trajectory import (
    Author,
    Label,
    Outcome,
    Step,
    Trajectory,
    erase_step,
    segment_for_training,
    write_jsonl,
)

log = logging.getLogger(__name__)

_ANNOTATION = re.compile(r"<<([^<>]*)>>")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+|\n+")
_FINAL_MARK = re.compile(r"^\s*####.*$", re.MULTILINE)


@dataclass(frozen=True)
class CompileResult:
    trajectory: Trajectory
    issues: tuple[str, ...] = ()

    @property
    def low_quality(self) -> bool:
        return any(i.startswith("no annotations") for i in self.issues)


def _sentences(rationale: str) -> list[str]:
    text = _FINAL_MARK.sub("", rationale)
    stash: list[str] = []

    def hide(m: re.Match) -> str:
        stash.append(m.group(0))
        return f"\x00{len(stash) - 1}\x00"

    hidden = _ANNOTATION.sub(hide, text)
    out = []
    for piece in _SENTENCE_END.split(hidden):
        piece = re.sub(r"\x00(\d+)\x00", lambda m: stash[int(m.group(1))], piece).strip()
        if piece:
            out.append(piece)
    return out


_ANNOTATION_WS = re.compile(r"(\s*)<<[^<>]*>>(?=(\S?))")


def _clean(text: str) -> str:
    # keep the gap before an annotation only when a word follows it
    def drop(m: re.Match) -> str:
        return m.group(1) if m.group(2) and m.group(2) not in ".,;:!?" else ""

    return " ".join(_ANNOTATION_WS.sub(drop, text).split())


def compile_rationale(rec: DatasetRecord) -> CompileResult:
    """Deterministically compile a gold rationale into a trajectory.

    Each annotation becomes a ``Calculator`` step whose observation is
    computed, not copied from the annotation; text without annotations is
    carried into the next step's thought. A ``Finish`` step ends the run.
    """
    issues: list[str] = []
    steps: list[Step] = []
    pending: list[str] = []

    for sentence in _sentences(rec.rationale):
        annotations = _ANNOTATION.findall(sentence)
        usable = []
        for ann in annotations:
            expr, sep, claimed = ann.rpartition("=")
            if not sep or not CALCULATOR_CHARS.match(expr) or not expr.strip():
                issues.append(f"unusable annotation <<{ann}>>")
                continue
            try:
                value = eval_expression(expr)
            except (EvaluationError, ExpressionSyntaxError) as exc:
                issues.append(f"unusable annotation <<{ann}>>: {exc}")
                continue
            claimed_value = parse_number(claimed)
            if claimed_value is None or claimed_value != value:
                issues.append(f"annotation mismatch <<{ann}>>: computed {render_value(value)}")
            usable.append((expr.strip(), value))
        if not usable:
            pending.append(_clean(sentence))
            continue
        for k, (expr, value) in enumerate(usable):
            if k == 0:
                thought = " ".join(pending + [_clean(sentence)])
                pending = []
            else:
                thought = f"Compute {expr}."
            steps.append(Step(len(steps), Author.GOLD, thought, f"Calculator({expr})", render_value(value)))

    if not steps:
        issues.append("no annotations: compiled to a single Finish step")
    answer = rec.answer.strip()
    thought = " ".join(pending) or f"The answer is {answer}."
    steps.append(Step(len(steps), Author.GOLD, thought, str(finish(answer)), answer))
    traj = Trajectory(rec.question_id, rec.question, tuple(steps), answer, Outcome.CORRECT)
    for issue in issues:
        log.warning("%s: %s", rec.question_id, issue)
    return CompileResult(traj, tuple(issues))


def compile_with_agent(rec: DatasetRecord, agent: Agent, max_steps: int = 15) -> CompileResult:
    """Let an agent annotate the rationale; every action must parse.

    The agent sees the question followed by the reference rationale; the
    returned trajectory carries the plain question.
    """
    prompt_traj = Trajectory(rec.question_id, f"{rec.question}\nReference solution: {rec.rationale}")
    ctx = ToolContext()
    while prompt_traj.next_index < max_steps:
        proposal = agent.generate_step(prompt_traj)
        try:
            action = parse_action(proposal.action_text)
        except ActionParseError as exc:
            return CompileResult(compile_rationale(rec).trajectory, (f"annotator produced invalid action: {exc}",))
        observation, ctx = execute(action, ctx)
        step = Step(prompt_traj.next_index, Author.GOLD, proposal.thought, proposal.action_text, observation)
        prompt_traj = prompt_traj.append(step)
        if action.is_finish:
            correct = grade_answer(action.arg, rec.answer)
            traj = Trajectory(rec.question_id, rec.question, prompt_traj.steps, action.arg, Outcome.CORRECT if correct else Outcome.WRONG)
            return CompileResult(traj, () if correct else ("annotator answer mismatch",))
    return CompileResult(compile_rationale(rec).trajectory, ("annotator did not finish",))


@dataclass(frozen=True)
class ExamConfig:
    samples_per_question: int = 4
    temperature: float = 0.7
    top_k: int | None = 40
    mode: str = "math"
    max_steps: int = 15
    tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if not 1 <= self.samples_per_question <= 4:
            raise ValueError("samples_per_question must lie in [1, 4]")


@dataclass
class ExamReport:
    question_id: str
    sample: int
    retained: bool
    corrections: int
    labels: list[str] = field(default_factory=list)
    reason: str | None = None

    def to_json(self) -> dict[str, Any]:
        out = {
            "question_id": self.question_id,
            "sample": self.sample,
            "retained": self.retained,
            "corrections": self.corrections,
            "labels": self.labels,
        }
        if self.reason is not None:
            out["reason"] = self.reason
        return out


def _attempt(agent: Agent, traj: Trajectory, ctx: ToolContext, exam: ExamConfig) -> tuple[Step, ToolContext]:
    index = traj.next_index
    author = Author(agent.profile.role)
    try:
        proposal = agent.generate_step(traj, temperature=exam.temperature, top_k=exam.top_k)
    except MalformedStepError as exc:
        return Step(index, author, exc.raw.strip(), "", f"tool error: {exc}"), ctx
    try:
        action = parse_action(proposal.action_text)
    except ActionParseError as exc:
        return Step(index, author, proposal.thought, proposal.action_text, f"tool error: {exc}"), ctx
    observation, new_ctx = execute(action, ctx)
    return Step(index, author, proposal.thought, proposal.action_text, observation), new_ctx


def _examine_once(
    rec: DatasetRecord,
    local: Agent,
    cloud: Agent,
    ref: ReferenceSet,
    exam: ExamConfig,
    judge: Judge | None,
    tools: ToolContext,
) -> tuple[Trajectory, int]:
    traj = Trajectory(rec.question_id, rec.question)
    ctx = tools
    corrections = 0
    while traj.next_index < exam.max_steps:
        step, new_ctx = _attempt(local, traj, ctx, exam)
        verdict = check_step(step, ref, judge)
        traj = traj.append(replace(step, oracle_label=verdict.label))
        if verdict.label is Label.WRONG:
            traj = erase_step(traj, step.index)
            step, new_ctx = _attempt(cloud, traj, ctx, exam)
            traj = traj.append(replace(step, oracle_label=check_step(step, ref, judge).label))
            corrections += 1
        ctx = new_ctx
        last = traj.last_active
        if last.is_finish:
            answer = parse_action(last.action_text).arg
            ok = grade_answer(answer, rec.answer, exam.mode, exam.tolerance)
            return replace(traj, final_answer=answer, outcome=Outcome.CORRECT if ok else Outcome.WRONG), corrections
    return traj, corrections


def run_examination(
    rec: DatasetRecord,
    local: Agent,
    cloud: Agent,
    exam: ExamConfig,
    *,
    gold: Trajectory | None = None,
    judge: Judge | None = None,
    tools: ToolContext | None = None,
    seed: int = 0,
) -> tuple[list[Trajectory], list[ExamReport]]:
    """Examine one question; returns (retained revised trajectories, per-sample reports).

    Samples run in order because each retained sample enlarges the
    reference set used to label the next one.
    """
    gold = gold or compile_rationale(rec).trajectory
    ref = build_reference([gold], exam.mode, exam.tolerance)
    tools = tools or ToolContext()
    retained: list[Trajectory] = []
    reports: list[ExamReport] = []
    for sample in range(exam.samples_per_question):
        episode = derive_seed(seed, rec.question_id, "sample", sample)
        local.begin_episode(episode)
        cloud.begin_episode(episode)
        try:
            traj, corrections = _examine_once(rec, local, cloud, ref, exam, judge, tools)
        except BackendError as exc:
            log.warning("%s sample %d discarded: %s", rec.question_id, sample, exc)
            reports.append(ExamReport(rec.question_id, sample, False, 0, reason=f"backend error: {exc}"))
            continue
        labels = [s.oracle_label.value if s.oracle_label else "" for s in traj.steps]
        keep = traj.outcome is Outcome.CORRECT
        reason = None
        if not keep:
            reason = "unfinished" if traj.final_answer is None else "final answer mismatch"
        reports.append(ExamReport(rec.question_id, sample, keep, corrections, labels, reason))
        if keep:
            retained.append(traj)
            ref.add(traj)
    return retained, reports


def examine_batch(
    records: Sequence[DatasetRecord],
    local: AgentProfile,
    cloud: AgentProfile,
    exam: ExamConfig,
    *,
    gold: dict[str, Trajectory] | None = None,
    judge: Judge | None = None,
    tools: ToolContext | None = None,
    seed: int = 0,
    parallelism: int = 1,
) -> tuple[list[Trajectory], list[ExamReport]]:
    gold = gold or {}

    def one(rec: DatasetRecord) -> tuple[list[Trajectory], list[ExamReport]]:
        qseed = derive_seed(seed, rec.question_id)
        local_agent = make_agent(local, derive_seed(qseed, "local"), qseed)
        cloud_agent = make_agent(cloud, derive_seed(qseed, "cloud"), qseed)
        return run_examination(
            rec, local_agent, cloud_agent, exam, gold=gold.get(rec.question_id), judge=judge, tools=tools, seed=qseed
        )

    if parallelism <= 1:
        outputs = [one(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outputs = list(pool.map(one, records))
    revised = [t for kept, _ in outputs for t in kept]
    reports = [r for _, reps in outputs for r in reps]
    return revised, reports


SELF_PRACTICING_FILE = "self_practicing.jsonl"
REFLECTIVE_FILE = "reflective.jsonl"


def emit_training_sets(gold: Sequence[Trajectory], revised: Sequence[Trajectory], out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    first, second = out / SELF_PRACTICING_FILE, out / REFLECTIVE_FILE
    write_jsonl(first, (segment_for_training(t).to_json() for t in gold))
    write_jsonl(second, (segment_for_training(t).to_json() for t in revised))
    return first, second
