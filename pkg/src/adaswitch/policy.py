"""Escalation rules evaluated after each local step.

``decide`` is a pure function of (config, state, signals); the random
variant carries its generator state inside :class:`PolicyState`.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from adaswitch.seeding import derive_seed


class Decision(str, Enum):
    KEEP = "keep"
    ESCALATE = "escalate"


class MissingSignalError(ValueError):
    pass


class PolicyParseError(ValueError):
    pass


@dataclass(frozen=True)
class Adaptive:
    p: float

    def __post_init__(self) -> None:
        if self.p < 0:
            raise ValueError("adaptive threshold must be >= 0")


@dataclass(frozen=True)
class Confidence:
    p: float
    aggregator: str = "geometric_mean"

    def __post_init__(self) -> None:
        if not 0 < self.p <= 1:
            raise ValueError("confidence threshold must lie in (0, 1]")
        if self.aggregator not in ("geometric_mean", "min"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")


@dataclass(frozen=True)
class RandomSwitch:
    p: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.p <= 1:
            raise ValueError("random switch probability must lie in [0, 1]")


@dataclass(frozen=True)
class Sequential:
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("sequential period k must be >= 1")


@dataclass(frozen=True)
class Never:
    pass


@dataclass(frozen=True)
class Always:
    pass


PolicyConfig = Adaptive | Confidence | RandomSwitch | Sequential | Never | Always


@dataclass(frozen=True)
class StepMeta:
    step_index: int
    error_prob: float | None = None
    token_logprobs: Sequence[float] | None = None


@dataclass(frozen=True)
class PolicyState:
    decisions: int = 0
    rng_state: tuple | None = None


def initial_state(cfg: PolicyConfig, seed: int | None = None) -> PolicyState:
    if isinstance(cfg, RandomSwitch):
        rng = random.Random(cfg.seed if seed is None else derive_seed(cfg.seed, seed))
        return PolicyState(0, rng.getstate())
    return PolicyState()


def aggregate_confidence(logprobs: Sequence[float], aggregator: str = "geometric_mean") -> float:
    if not logprobs:
        raise MissingSignalError("empty token logprobs")
    if aggregator == "min":
        return math.exp(min(logprobs))
    return math.exp(math.fsum(logprobs) / len(logprobs))


def decide(cfg: PolicyConfig, state: PolicyState, meta: StepMeta) -> tuple[Decision, PolicyState]:
    escalate: bool
    rng_state = state.rng_state
    if isinstance(cfg, Adaptive):
        if meta.error_prob is None:
            raise MissingSignalError("adaptive policy needs error_prob")
        escalate = meta.error_prob >= cfg.p
    elif isinstance(cfg, Confidence):
        if meta.token_logprobs is None:
            raise MissingSignalError("confidence policy needs token logprobs")
        escalate = aggregate_confidence(meta.token_logprobs, cfg.aggregator) < cfg.p
    elif isinstance(cfg, RandomSwitch):
        rng = random.Random()
        rng.setstate(rng_state if rng_state is not None else initial_state(cfg).rng_state)
        escalate = rng.random() < cfg.p
        rng_state = rng.getstate()
    elif isinstance(cfg, Sequential):
        escalate = (meta.step_index + 1) % cfg.k == 0
    elif isinstance(cfg, Always):
        escalate = True
    else:
        escalate = False
    new_state = replace(state, decisions=state.decisions + 1, rng_state=rng_state)
    return (Decision.ESCALATE if escalate else Decision.KEEP), new_state


_ALIASES = {"geo": "geometric_mean", "geometric": "geometric_mean", "geometric_mean": "geometric_mean", "min": "min"}
_POLICY_TEXT = re.compile(r"^\s*([a-z]+)\s*(?::(.*))?$")


def parse_policy(text: str) -> PolicyConfig:
    """Parse the CLI policy grammar.

    >>> parse_policy("adaptive:p=0.5")
    Adaptive(p=0.5)
    >>> parse_policy("random:p=0.3,seed=17")
    RandomSwitch(p=0.3, seed=17)
    """
    m = _POLICY_TEXT.match(text)
    if m is None:
        raise PolicyParseError(f"bad policy {text!r}")
    kind, rest = m.group(1), m.group(2)
    params: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, sep, value = item.partition("=")
            if not sep or not key.strip() or not value.strip():
                raise PolicyParseError(f"bad parameter {item!r} in {text!r}")
            params[key.strip()] = value.strip()

    def need(*keys: str, optional: tuple[str, ...] = ()) -> None:
        missing = [k for k in keys if k not in params]
        extra = [k for k in params if k not in keys + optional]
        if missing or extra:
            raise PolicyParseError(f"{kind}: missing {missing} / unexpected {extra}")

    try:
        if kind == "adaptive":
            need("p")
            return Adaptive(float(params["p"]))
        if kind == "confidence":
            need("p", optional=("agg",))
            agg = params.get("agg", "geo")
            if agg not in _ALIASES:
                raise PolicyParseError(f"unknown aggregator {agg!r}")
            return Confidence(float(params["p"]), _ALIASES[agg])
        if kind == "random":
            need("p", optional=("seed",))
            return RandomSwitch(float(params["p"]), int(params.get("seed", 0)))
        if kind == "sequential":
            need("k")
            return Sequential(int(params["k"]))
        if kind == "never":
            need()
            return Never()
        if kind == "always":
            need()
            return Always()
    except ValueError as exc:
        if isinstance(exc, PolicyParseError):
            raise
        raise PolicyParseError(f"{text!r}: {exc}") from exc
    raise PolicyParseError(f"unknown policy {kind!r}")


def format_policy(cfg: PolicyConfig) -> str:
    if isinstance(cfg, Adaptive):
        return f"adaptive:p={cfg.p:g}"
    if isinstance(cfg, Confidence):
        return f"confidence:p={cfg.p:g},agg={'geo' if cfg.aggregator == 'geometric_mean' else 'min'}"
    if isinstance(cfg, RandomSwitch):
        return f"random:p={cfg.p:g},seed={cfg.seed}"
    if isinstance(cfg, Sequential):
        return f"sequential:k={cfg.k}"
    return "always" if isinstance(cfg, Always) else "never"
