"""JSON run configuration: agent profiles, tool fixtures, defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from adaswitch.actions import ToolContext, make_context
from adaswitch.backends import AgentProfile, Sampling


class ConfigError(ValueError):
    pass


DEFAULT_PROFILES: dict[str, dict[str, Any]] = {
    "local": {
        "role": "local",
        "param_count": 1.3e9,
        "backend": {
            "kind": "synthetic",
            "step_error_rate": 0.3,
            "detect_rate_when_wrong": 0.9,
            "false_alarm_rate_when_correct": 0.1,
        },
    },
    "cloud": {
        "role": "cloud",
        "param_count": 30e9,
        "backend": {"kind": "synthetic", "step_error_rate": 0.05},
    },
}


@dataclass(frozen=True)
class Defaults:
    max_steps: int = 15
    retries: int = 2
    tolerance: float = 1e-6


@dataclass
class Config:
    profiles: dict[str, AgentProfile] = field(default_factory=dict)
    knowledge_path: str | None = None
    qa_path: str | None = None
    defaults: Defaults = Defaults()

    def profile(self, name: str) -> AgentProfile:
        try:
            return self.profiles[name]
        except KeyError:
            raise ConfigError(f"unknown profile {name!r}; known: {sorted(self.profiles)}") from None

    def tools(self) -> ToolContext:
        return make_context(self.knowledge_path, self.qa_path)


def _profile(name: str, entry: Mapping[str, Any], base: Path) -> AgentProfile:
    try:
        backend = dict(entry.get("backend", {"kind": "synthetic"}))
        if "fixture_path" in backend:
            backend["fixture_path"] = str((base / backend["fixture_path"]).resolve())
        sampling = Sampling(**entry.get("sampling", {}))
        return AgentProfile(name, entry["role"], float(entry["param_count"]), backend, sampling)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"profile {name!r}: {exc}") from exc


def parse_config(obj: Mapping[str, Any], base: Path | None = None) -> Config:
    """Build a config; relative paths resolve against ``base``."""
    base = base or Path.cwd()
    profile_entries = obj.get("profiles") or DEFAULT_PROFILES
    profiles = {name: _profile(name, entry, base) for name, entry in profile_entries.items()}
    tools = obj.get("tools") or {}

    def resolve(key: str) -> str | None:
        value = tools.get(key)
        return str((base / value).resolve()) if value else None

    try:
        defaults = Defaults(**(obj.get("defaults") or {}))
    except TypeError as exc:
        raise ConfigError(f"defaults: {exc}") from exc
    return Config(profiles, resolve("knowledge_path"), resolve("qa_path"), defaults)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(obj, path.parent)
