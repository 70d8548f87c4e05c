"""Agent backends: remote chat-completions, scripted replay, seeded synthetic.

Every agent answers two questions about a trajectory: what is the next step
(:meth:`generate_step`) and how likely is the last step wrong
(:meth:`reflect`). Agents are cheap to build and hold per-run state, so the
orchestrator creates a fresh pair for every question.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

import requests

from adaswitch.arith import render_value
from adaswitch.metrics import TokenEstimator, estimate_tokens, parse_number, within_tolerance
from adaswitch.seeding import derive_seed, unit_draw
from adaswitch.synthetic import SyntheticTask, apply_op, expression, parse_task
from adaswitch.trajectory import Trajectory, serialize_trajectory

log = logging.getLogger(__name__)

WRONG_VERDICT = "WRONG"
OK_VERDICT = "OK"

SYSTEM_PROMPT = (
    "You solve problems step by step with tools. For the next step, write one short "
    "thought, then a line starting with 'Action:' holding exactly one action, e.g. "
    "Calculator(2*3) or Finish(answer)."
)
REFLECT_PROMPT = (
    "Judge the most recent step of the trajectory. Reply with a single word: "
    f"{WRONG_VERDICT} if the step is wrong, {OK_VERDICT} otherwise."
)


class BackendError(RuntimeError):
    pass


class MalformedStepError(BackendError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class ReflectionError(BackendError):
    pass


@dataclass(frozen=True)
class Sampling:
    temperature: float = 0.0
    top_k: int | None = None
    max_new_tokens: int = 256

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class AgentProfile:
    name: str
    role: str
    param_count: float
    backend: Mapping[str, Any] = field(default_factory=lambda: {"kind": "synthetic"})
    sampling: Sampling = Sampling()

    def __post_init__(self) -> None:
        if self.param_count <= 0:
            raise ValueError(f"profile {self.name!r}: param_count must be > 0")
        if self.role not in ("local", "cloud"):
            raise ValueError(f"profile {self.name!r}: role must be local or cloud")


@dataclass(frozen=True)
class StepProposal:
    thought: str
    action_text: str
    token_logprobs: tuple[float, ...] | None = None
    prompt_token_count: int = 0
    generated_token_count: int = 0


@dataclass(frozen=True)
class Reflection:
    prob: float
    prompt_token_count: int = 0
    generated_token_count: int = 0


def prompt_for(traj: Trajectory) -> str:
    return serialize_trajectory(traj, include_erased=False)


def reflect_prompt_for(traj: Trajectory) -> str:
    last = traj.last_active
    index = last.index if last is not None else 0
    return prompt_for(traj) + f"Check {index}:"


class Agent:
    """Base contract; subclasses implement :meth:`generate_step` and :meth:`reflect`."""

    def __init__(self, profile: AgentProfile, estimator: TokenEstimator = estimate_tokens):
        self.profile = profile
        self.estimator = estimator

    def begin_episode(self, episode_seed: int) -> None:
        """Hook called before each sampled run of the same question."""

    def generate_step(self, traj: Trajectory, **overrides: Any) -> StepProposal:
        raise NotImplementedError

    def reflect(self, traj: Trajectory) -> Reflection:
        raise NotImplementedError


# --------------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticAgentConfig:
    step_error_rate: float = 0.0
    detect_rate_when_wrong: float = 1.0
    false_alarm_rate_when_correct: float = 0.0
    seed: int = 0
    tokens_per_step: int = 24
    # mean per-token probability reported alongside a step; feeds the confidence policy
    confidence_when_correct: float = 0.9
    confidence_when_wrong: float = 0.75
    confidence_noise: float = 0.1
    # steps hard for one agent are hard for all: a shared per-step difficulty draw
    shared_difficulty: bool = True
    reflection: str = "binary"

    def __post_init__(self) -> None:
        for name in ("step_error_rate", "detect_rate_when_wrong", "false_alarm_rate_when_correct"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.reflection not in ("binary", "graded"):
            raise ValueError("reflection must be 'binary' or 'graded'")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "SyntheticAgentConfig":
        known = {k: v for k, v in mapping.items() if k in cls.__dataclass_fields__}
        return cls(**known)


_OFFSETS = [k for k in range(-9, 10) if k]


class SyntheticAgent(Agent):
    """Solves arithmetic-chain tasks, corrupting each step with probability ε.

    The next step always builds on the last observation, so an uncorrected
    error propagates to the answer. Corrupted and propagated-wrong results
    are pushed away from every value of the true chain, which keeps the
    step oracle's labels equal to the ground truth.
    """

    def __init__(
        self,
        profile: AgentProfile,
        config: SyntheticAgentConfig,
        seed: int | None = None,
        episode_seed: int | None = None,
        estimator: TokenEstimator = estimate_tokens,
        tolerance: float = 1e-6,
    ):
        super().__init__(profile, estimator)
        self.config = config
        base = config.seed if seed is None else derive_seed(config.seed, seed)
        self.episode_seed = base if episode_seed is None else episode_seed
        self._gen = random.Random(derive_seed(base, profile.name, "generate"))
        self._refl = random.Random(derive_seed(base, profile.name, "reflect"))
        self.tolerance = tolerance
        self._tasks: dict[str, SyntheticTask] = {}

    def begin_episode(self, episode_seed: int) -> None:
        self.episode_seed = episode_seed

    def _task(self, traj: Trajectory) -> SyntheticTask:
        task = self._tasks.get(traj.question)
        if task is None:
            task = parse_task(traj.question, traj.question_id)
            if task is None:
                raise BackendError(f"synthetic backend cannot read task {traj.question_id!r}")
            self._tasks[traj.question] = task
        return task

    def _difficulty(self, traj: Trajectory, index: int) -> float:
        retries = sum(
            1 for s in traj.steps if s.erased and s.index == index and s.author.value == self.profile.role
        )
        if self.config.shared_difficulty and retries == 0:
            return unit_draw(self.episode_seed, traj.question, index)
        return self._gen.random()

    def _near_chain(self, value: Fraction, chain: tuple[Fraction, ...]) -> bool:
        return any(within_tolerance(value, ref, self.tolerance) for ref in chain)

    def _push_off(self, result: Fraction, chain: tuple[Fraction, ...]) -> int:
        scale = max(1, math.ceil(abs(result) / 100))
        while True:
            delta = self._gen.choice(_OFFSETS) * scale
            if not self._near_chain(result + delta, chain):
                return delta
            scale += 1

    def _logprobs(self, correct: bool) -> tuple[float, ...]:
        cfg = self.config
        centre = cfg.confidence_when_correct if correct else cfg.confidence_when_wrong
        out = []
        for _ in range(cfg.tokens_per_step):
            p = min(1.0, max(1e-4, self._gen.gauss(centre, cfg.confidence_noise)))
            out.append(math.log(p))
        return tuple(out)

    def generate_step(self, traj: Trajectory, **overrides: Any) -> StepProposal:
        task = self._task(traj)
        values = task.values
        t = traj.next_index
        last = traj.last_active
        last_value = parse_number(last.observation) if last is not None else None

        if t >= task.n_steps:
            answer = last_value if last_value is not None else values[-1]
            thought = "All operations are applied, so this is the final value."
            action = f"Finish({render_value(answer)})"
            correct = answer == values[-1]
        else:
            op, operand = task.chain[t]
            current = last_value if (t > 0 and last_value is not None) else values[t]
            result = apply_op(current, op, operand)
            expr = expression(current, op, operand)
            corrupt = self._difficulty(traj, t) < self.config.step_error_rate
            if corrupt or (result != values[t + 1] and self._near_chain(result, values)):
                delta = self._push_off(result, values)
                expr += f"+{delta}" if delta > 0 else f"-{-delta}"
                result += delta
            thought = f"Apply the next operation: {op} {operand}."
            action = f"Calculator({expr})"
            correct = result == values[t + 1]

        return StepProposal(
            thought=thought,
            action_text=action,
            token_logprobs=self._logprobs(correct),
            prompt_token_count=self.estimator(prompt_for(traj)),
            generated_token_count=self.config.tokens_per_step,
        )

    def step_is_wrong(self, traj: Trajectory) -> bool:
        """Ground truth for the last non-erased step."""
        task = self._task(traj)
        last = traj.last_active
        if last is None:
            return False
        value = parse_number(last.observation)
        target = task.values[-1] if last.index >= task.n_steps else task.values[last.index + 1]
        return value is None or value != target

    def reflect(self, traj: Trajectory) -> Reflection:
        cfg = self.config
        wrong = self.step_is_wrong(traj)
        r, s = self._refl.random(), self._refl.random()
        flagged = r < (cfg.detect_rate_when_wrong if wrong else cfg.false_alarm_rate_when_correct)
        if cfg.reflection == "binary":
            prob = 1.0 if flagged else 0.0
        else:
            prob = 0.5 + 0.5 * s if flagged else 0.5 * s
        return Reflection(prob, self.estimator(reflect_prompt_for(traj)), 1)


# --------------------------------------------------------------------------- scripted


@dataclass(frozen=True)
class ScriptEntry:
    question_id: str
    step_index: int
    thought: str
    action: str
    reflect_prob: float | None = None
    token_logprobs: tuple[float, ...] | None = None


def load_script(path: str | Path) -> dict[str, tuple[ScriptEntry, ...]]:
    table: dict[str, list[ScriptEntry]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        lp = rec.get("token_logprobs")
        entry = ScriptEntry(
            str(rec["question_id"]),
            int(rec["step_index"]),
            rec["thought"],
            rec["action"],
            rec.get("reflect_prob"),
            tuple(lp) if lp is not None else None,
        )
        table.setdefault(entry.question_id, []).append(entry)
    return {k: tuple(v) for k, v in table.items()}


class ScriptedAgent(Agent):
    """Replays fixture entries for each question in file order."""

    def __init__(self, profile: AgentProfile, script: Mapping[str, tuple[ScriptEntry, ...]], **kwargs: Any):
        super().__init__(profile, kwargs.get("estimator", estimate_tokens))
        self.script = script
        self._cursor: dict[str, int] = {}
        self._last: ScriptEntry | None = None

    def generate_step(self, traj: Trajectory, **overrides: Any) -> StepProposal:
        entries = self.script.get(traj.question_id, ())
        pos = self._cursor.get(traj.question_id, 0)
        if pos >= len(entries):
            raise BackendError(f"script exhausted for question {traj.question_id!r}")
        self._cursor[traj.question_id] = pos + 1
        entry = self._last = entries[pos]
        generated = entry.thought + "\n" + entry.action
        count = len(entry.token_logprobs) if entry.token_logprobs is not None else self.estimator(generated)
        return StepProposal(entry.thought, entry.action, entry.token_logprobs, self.estimator(prompt_for(traj)), count)

    def reflect(self, traj: Trajectory) -> Reflection:
        prob = self._last.reflect_prob if self._last is not None and self._last.reflect_prob is not None else 0.0
        return Reflection(prob, self.estimator(reflect_prompt_for(traj)), 1)


# --------------------------------------------------------------------------- remote

_ACTION_MARKER = re.compile(r"Action(?:\s+\d+)?\s*:")
_THOUGHT_LABEL = re.compile(r"^\s*Thought(?:\s+\d+)?\s*:\s*")
_SCORE = re.compile(r"(?<![\d.])(1(?:\.0+)?|0(?:\.\d+)?|\.\d+)(?![\d.])")


def api_key_env(profile_name: str) -> str:
    return "ADASWITCH_API_KEY_" + re.sub(r"[^A-Z0-9]", "_", profile_name.upper())


def split_reply(reply: str) -> tuple[str, str]:
    """Split a model reply into (thought, action) on the first action marker."""
    m = _ACTION_MARKER.search(reply)
    if m is None:
        raise MalformedStepError("reply has no 'Action:' marker", reply)
    thought = _THOUGHT_LABEL.sub("", reply[: m.start()]).strip()
    rest = reply[m.end() :].strip()
    action = rest.splitlines()[0].strip() if rest else ""
    if not action:
        raise MalformedStepError("empty action", reply)
    return thought, action


def _logprob_entries(choice: Mapping[str, Any]) -> list[Mapping[str, Any]] | None:
    lp = choice.get("logprobs")
    if not lp:
        return None
    content = lp.get("content")
    return content if content else None


def verdict_probability(choice: Mapping[str, Any]) -> float:
    """Wrongness probability from a verdict reply.

    Prefers ``exp(logprob)`` of the WRONG verdict token, looking at the
    sampled first token and its top alternatives; falls back to a numeric
    self-score in the reply text.
    """
    entries = _logprob_entries(choice)
    if entries:
        first = entries[0]
        candidates = [(first.get("token", ""), first.get("logprob"))]
        candidates += [(alt.get("token", ""), alt.get("logprob")) for alt in first.get("top_logprobs") or []]
        for token, logprob in candidates:
            tok = token.strip().upper()
            if tok and WRONG_VERDICT.startswith(tok) and logprob is not None:
                return min(1.0, math.exp(logprob))
        return 0.0
    text = (choice.get("message") or {}).get("content") or ""
    m = _SCORE.search(text)
    if m is None:
        raise ReflectionError(f"cannot read a wrongness score from {text!r}")
    return float(m.group(1))


class RemoteAgent(Agent):
    """OpenAI-compatible ``/v1/chat/completions`` client."""

    def __init__(self, profile: AgentProfile, estimator: TokenEstimator = estimate_tokens, **_: Any):
        super().__init__(profile, estimator)
        backend = profile.backend
        self.base_url = str(backend["base_url"]).rstrip("/")
        self.model = backend.get("model", profile.name)
        self.timeout = float(backend.get("timeout", 30.0))
        self.retries = int(backend.get("retries", 2))
        self.logprobs = bool(backend.get("logprobs", True))
        self.session = requests.Session()

    @property
    def url(self) -> str:
        return f"{self.base_url}/v1/chat/completions"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env(self.profile.name))
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict[str, Any]) -> dict[str, Any]:
        deadline = time.monotonic() + self.timeout * (self.retries + 1)
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                resp = self.session.post(
                    self.url, json=payload, headers=self._headers(), timeout=min(self.timeout, remaining)
                )
            except requests.RequestException as exc:
                last_error = exc
                log.warning("%s: attempt %d failed: %s", self.profile.name, attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = BackendError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendError(f"invalid JSON from {self.url}") from exc
        raise BackendError(f"{self.profile.name}: request failed after {self.retries + 1} attempts: {last_error}")

    def _payload(self, messages: list[dict[str, str]], temperature: float, max_tokens: int) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        if self.logprobs:
            payload["logprobs"] = True
        return payload

    def generate_step(self, traj: Trajectory, **overrides: Any) -> StepProposal:
        sampling = self.profile.sampling
        prompt = prompt_for(traj) + f"Thought {traj.next_index}:"
        messages = [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": prompt}]
        payload = self._payload(
            messages,
            overrides.get("temperature", sampling.temperature),
            overrides.get("max_new_tokens", sampling.max_new_tokens),
        )
        data = self._post(payload)
        try:
            choice = data["choices"][0]
            reply = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("response lacks choices[0].message.content") from exc
        thought, action = split_reply(reply)
        entries = _logprob_entries(choice)
        logprobs = tuple(float(e["logprob"]) for e in entries) if entries else None
        usage = data.get("usage") or {}
        generated = len(logprobs) if logprobs is not None else usage.get("completion_tokens", self.estimator(reply))
        return StepProposal(
            thought=thought,
            action_text=action,
            token_logprobs=logprobs,
            prompt_token_count=int(usage.get("prompt_tokens", self.estimator(SYSTEM_PROMPT + prompt))),
            generated_token_count=int(generated),
        )

    def reflect(self, traj: Trajectory) -> Reflection:
        prompt = reflect_prompt_for(traj)
        messages = [{"role": "system", "content": REFLECT_PROMPT}, {"role": "user", "content": prompt}]
        payload = self._payload(messages, 0.0, 1)
        if self.logprobs:
            payload["top_logprobs"] = 5
        data = self._post(payload)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise ReflectionError("response lacks choices[0]") from exc
        usage = data.get("usage") or {}
        return Reflection(
            verdict_probability(choice),
            int(usage.get("prompt_tokens", self.estimator(REFLECT_PROMPT + prompt))),
            int(usage.get("completion_tokens", 1)),
        )


# --------------------------------------------------------------------------- factory

_SCRIPTS: dict[str, Mapping[str, tuple[ScriptEntry, ...]]] = {}


def make_agent(
    profile: AgentProfile,
    seed: int | None = None,
    episode_seed: int | None = None,
    estimator: TokenEstimator = estimate_tokens,
) -> Agent:
    kind = profile.backend.get("kind", "synthetic")
    if kind == "synthetic":
        cfg = SyntheticAgentConfig.from_mapping(profile.backend)
        return SyntheticAgent(profile, cfg, seed=seed, episode_seed=episode_seed, estimator=estimator)
    if kind == "scripted":
        path = str(profile.backend["fixture_path"])
        if path not in _SCRIPTS:
            _SCRIPTS[path] = load_script(path)
        return ScriptedAgent(profile, _SCRIPTS[path], estimator=estimator)
    if kind == "remote":
        return RemoteAgent(profile, estimator=estimator)
    raise ValueError(f"unknown backend kind {kind!r}")
