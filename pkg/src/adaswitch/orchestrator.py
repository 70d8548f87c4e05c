"""Collaborative inference: local generation, reflection, escalation, cost capture."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Sequence

from adaswitch.actions import ActionParseError, ToolContext, execute, parse_action
from adaswitch.backends import (
    Agent,
    AgentProfile,
    BackendError,
    MalformedStepError,
    ReflectionError,
    StepProposal,
    make_agent,
)
from adaswitch.data import DatasetRecord
from adaswitch.metrics import BatchSummary, CostReport, TokenEstimator, estimate_tokens, grade_answer, summarize
from adaswitch.policy import Decision, MissingSignalError, Never, PolicyConfig, StepMeta, decide, format_policy, initial_state
from adaswitch.seeding import derive_seed
from adaswitch.trajectory import Author, Outcome, Step, Trajectory, erase_step, trajectory_to_json

log = logging.getLogger(__name__)


class Mode(str, Enum):
    LOCAL_ONLY = "local_only"
    CLOUD_ONLY = "cloud_only"
    SELF_REFLECTION = "self_reflection"
    ADASWITCH = "adaswitch"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        aliases = {"local": "local_only", "cloud": "cloud_only", "self-reflection": "self_reflection"}
        return cls(aliases.get(text, text.replace("-", "_")))


@dataclass(frozen=True)
class InferenceConfig:
    mode: Mode = Mode.ADASWITCH
    policy: PolicyConfig = field(default_factory=Never)
    max_steps: int = 15
    max_self_retries: int = 2
    answer_mode: str = "math"
    tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_self_retries < 0:
            raise ValueError("max_self_retries must be >= 0")


@dataclass
class RunResult:
    trajectory: Trajectory
    cost: CostReport
    escalation_count: int = 0
    reflection_flags: list[tuple[int, float]] = field(default_factory=list)
    generation_calls: int = 0
    decisions: int = 0
    error: str | None = None

    @property
    def correct(self) -> bool:
        return self.trajectory.outcome is Outcome.CORRECT

    def to_json(self) -> dict[str, Any]:
        out = trajectory_to_json(self.trajectory)
        out["cost"] = self.cost.to_json()
        out["escalation_count"] = self.escalation_count
        out["reflection_flags"] = [[i, p] for i, p in self.reflection_flags]
        out["generation_calls"] = self.generation_calls
        out["decisions"] = self.decisions
        out["error"] = self.error
        return out


@dataclass
class _Attempt:
    step: Step
    proposal: StepProposal | None
    ctx: ToolContext
    malformed: bool


class _Run:
    """Mutable bookkeeping for one trajectory; discarded after the run."""

    def __init__(self, record: DatasetRecord, cfg: InferenceConfig, tools: ToolContext, policy_seed: int):
        self.record = record
        self.cfg = cfg
        self.traj = Trajectory(record.question_id, record.question)
        self.ctxs = [tools]
        self.cost = CostReport()
        self.result = RunResult(self.traj, self.cost)
        self.policy_state = initial_state(cfg.policy, policy_seed)

    def charge(self, agent: Agent, prompt_tokens: int, generated_tokens: int) -> None:
        p = agent.profile
        self.cost.charge(p.name, p.param_count, prompt_tokens, generated_tokens)

    def propose(self, agent: Agent) -> _Attempt:
        """Generate, parse and execute one step; nothing is appended yet."""
        index = self.traj.next_index
        author = Author(agent.profile.role)
        ctx = self.ctxs[-1]
        self.result.generation_calls += 1
        try:
            proposal = agent.generate_step(self.traj)
        except MalformedStepError as exc:
            step = Step(index, author, exc.raw.strip(), "", f"tool error: {exc}")
            return _Attempt(step, None, ctx, True)
        self.charge(agent, proposal.prompt_token_count, proposal.generated_token_count)
        try:
            action = parse_action(proposal.action_text)
        except ActionParseError as exc:
            step = Step(index, author, proposal.thought, proposal.action_text, f"tool error: {exc}")
            return _Attempt(step, proposal, ctx, True)
        observation, new_ctx = execute(action, ctx)
        step = Step(index, author, proposal.thought, proposal.action_text, observation)
        return _Attempt(step, proposal, new_ctx, False)

    def accept(self, attempt: _Attempt) -> None:
        self.traj = self.traj.append(attempt.step)
        self.ctxs.append(attempt.ctx)

    def erase_last(self) -> None:
        self.traj = erase_step(self.traj, self.traj.last_active.index)
        self.ctxs.pop()

    def reflect(self, agent: Agent) -> float:
        try:
            refl = agent.reflect(self.traj)
        except ReflectionError as exc:
            log.warning("%s: reflection failed, treating as 0: %s", self.record.question_id, exc)
            return 0.0
        self.charge(agent, refl.prompt_token_count, refl.generated_token_count)
        return min(1.0, max(0.0, refl.prob))


def _generate(run: _Run, agent: Agent, budget: int) -> tuple[_Attempt, int]:
    """Generate until the action parses or the per-index budget is spent."""
    while True:
        budget -= 1
        attempt = run.propose(agent)
        if not attempt.malformed or budget <= 0:
            return attempt, budget


def run_inference(
    record: DatasetRecord,
    local: Agent,
    cloud: Agent | None,
    cfg: InferenceConfig,
    tools: ToolContext | None = None,
    policy_seed: int | None = None,
) -> RunResult:
    """Solve one question under ``cfg.mode``.

    Each index gets ``1 + max_self_retries`` local generations, shared
    between malformed-action retries and self-reflection retries. In
    adaswitch mode an escalated step is erased and regenerated once by the
    cloud agent, whose steps are never reflected on. Backend failures abort
    the run with ``outcome=unanswered`` and the error recorded.
    """
    if cfg.mode in (Mode.CLOUD_ONLY, Mode.ADASWITCH) and cloud is None:
        raise ValueError(f"mode {cfg.mode.value} requires a cloud agent")
    run = _Run(record, cfg, tools or ToolContext(), policy_seed if policy_seed is not None else 0)
    reflective = cfg.mode in (Mode.SELF_REFLECTION, Mode.ADASWITCH)
    primary = cloud if cfg.mode is Mode.CLOUD_ONLY else local
    try:
        while run.traj.next_index < cfg.max_steps:
            attempt, budget = _generate(run, primary, cfg.max_self_retries + 1)
            if reflective:
                _reflect_and_correct(run, local, cloud, attempt, budget)
            else:
                run.accept(attempt)
            last = run.traj.last_active
            if last.is_finish:
                answer = parse_action(last.action_text).arg
                correct = grade_answer(answer, record.answer, cfg.answer_mode, cfg.tolerance)
                run.traj = replace(run.traj, final_answer=answer, outcome=Outcome.CORRECT if correct else Outcome.WRONG)
                break
    except (BackendError, MissingSignalError) as exc:
        log.warning("%s: run aborted: %s", record.question_id, exc)
        run.result.error = f"{type(exc).__name__}: {exc}"
        run.traj = replace(run.traj, final_answer=None, outcome=Outcome.UNANSWERED)
    run.result.trajectory = run.traj
    run.result.decisions = run.policy_state.decisions
    return run.result


def _reflect_and_correct(run: _Run, local: Agent, cloud: Agent | None, attempt: _Attempt, budget: int) -> None:
    cfg = run.cfg
    while True:
        run.accept(attempt)
        prob = run.reflect(local)
        run.traj = run.traj.replace_last(error_prob=prob)
        index = attempt.step.index
        run.result.reflection_flags.append((index, prob))
        logprobs = attempt.proposal.token_logprobs if attempt.proposal is not None else None
        decision, run.policy_state = decide(cfg.policy, run.policy_state, StepMeta(index, prob, logprobs))
        if decision is Decision.KEEP:
            return
        if cfg.mode is Mode.ADASWITCH:
            run.erase_last()
            correction, _ = _generate(run, cloud, 1)
            run.accept(correction)
            run.result.escalation_count += 1
            return
        if budget <= 0:
            return
        run.erase_last()
        attempt, budget = _generate(run, local, budget)


def run_batch(
    records: Sequence[DatasetRecord],
    local: AgentProfile,
    cloud: AgentProfile | None,
    cfg: InferenceConfig,
    *,
    seed: int = 0,
    parallelism: int = 1,
    tools: ToolContext | None = None,
    estimator: TokenEstimator = estimate_tokens,
) -> tuple[list[RunResult], BatchSummary]:
    """Run every record; output order and content are independent of ``parallelism``.

    Agents are rebuilt per record from seeds derived from
    ``(seed, question_id)``. A failing record yields a result with ``error``
    set instead of stopping the batch.
    """
    tools = tools or ToolContext()

    def one(record: DatasetRecord) -> RunResult:
        record_seed = derive_seed(seed, record.question_id)
        try:
            local_agent = make_agent(local, derive_seed(record_seed, "local"), record_seed, estimator)
            cloud_agent = (
                make_agent(cloud, derive_seed(record_seed, "cloud"), record_seed, estimator) if cloud else None
            )
            return run_inference(record, local_agent, cloud_agent, cfg, tools, derive_seed(record_seed, "policy"))
        except Exception as exc:  # isolate anything a single record can raise
            log.exception("%s: record failed", record.question_id)
            return RunResult(Trajectory(record.question_id, record.question), CostReport(), error=f"{type(exc).__name__}: {exc}")

    if parallelism <= 1:
        results = [one(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, records))
    return results, summarize(results)


def result_row(result: RunResult, method: str, cfg: InferenceConfig) -> dict[str, Any]:
    row = {"method": method, "mode": cfg.mode.value, "policy": format_policy(cfg.policy)}
    row.update(result.to_json())
    return row
