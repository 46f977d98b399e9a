"""Run configuration: a single JSON file with dotted-path overrides.

All relative paths in the file resolve against the config file location.
Validation collects every violation instead of stopping at the first.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EngineError
from .toolbus import AgentRole

_SIGNATURE_RE = re.compile(r"^\w+\([^()]*\)$")

DEFAULT_BUDGETS = {
    "depth_limit": 10,
    "large_library": False,
    "max_rounds": 5,
    "max_patch_rounds": 3,
    "wall_seconds": 3600.0,
    "fuzz_seconds": 60.0,
    "coverage_scope": "method_targeted",
}


@dataclass
class Config:
    base_dir: Path
    target: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    budgets: dict = field(default_factory=dict)
    adapter: dict = field(default_factory=dict)
    output_dir: str = "runs"

    def resolve(self, value: str) -> Path:
        return (self.base_dir / value).resolve()

    def budget(self, key: str):
        return self.budgets.get(key, DEFAULT_BUDGETS.get(key))

    def max_iterations(self, role: AgentRole) -> int | None:
        table = self.budgets.get("max_iterations", {})
        value = table.get(role.value)
        return int(value) if value is not None else None

    def depth_limit(self) -> int:
        if "depth_limit" in self.budgets:
            return int(self.budgets["depth_limit"])
        return 5 if self.budget("large_library") else 10


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply --set key=value entries with dotted paths onto the raw config."""
    for item in overrides:
        if "=" not in item:
            raise EngineError("BAD_ARGS", f"override must be key=value: {item}")
        key, _, value = item.partition("=")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise EngineError("BAD_ARGS", f"override path not an object: {key}")
        node[parts[-1]] = parsed
    return raw


def load_config(path: str | Path, overrides: list[str] | None = None) -> Config:
    path = Path(path)
    if not path.is_file():
        raise EngineError("IO", f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EngineError("PARSE", f"{path}: {exc}") from exc
    if overrides:
        raw = apply_overrides(raw, overrides)
    return Config(
        base_dir=path.parent.resolve(),
        target=raw.get("target", {}),
        model=raw.get("model", {}),
        budgets=raw.get("budgets", {}),
        adapter=raw.get("adapter", {}),
        output_dir=raw.get("output_dir", "runs"),
    )


def validate_config(config: Config) -> list[str]:
    """All violations found in the config, empty when valid."""
    problems: list[str] = []
    for key in ("library_name", "target_class", "target_method"):
        if not config.target.get(key):
            problems.append(f"target.{key} is required")
    method = config.target.get("target_method", "")
    if method and not _SIGNATURE_RE.match(method):
        problems.append(
            f"target.target_method must look like name(Type,...): {method!r}"
        )

    backend = config.model.get("backend")
    if backend not in ("scripted", "http"):
        problems.append("model.backend must be 'scripted' or 'http'")
    elif backend == "scripted":
        script = config.model.get("script")
        if not script:
            problems.append("model.script is required for the scripted backend")
        elif not config.resolve(script).is_file():
            problems.append(f"model.script does not exist: {script}")
    else:
        if not config.model.get("endpoint"):
            problems.append("model.endpoint is required for the http backend")
        if not config.model.get("model"):
            problems.append("model.model is required for the http backend")

    adapters = [key for key in ("sandbox_spec", "shell") if config.adapter.get(key)]
    if len(adapters) != 1:
        problems.append("exactly one adapter (adapter.sandbox_spec or adapter.shell) must be set")
    elif adapters[0] == "sandbox_spec":
        if not config.resolve(config.adapter["sandbox_spec"]).is_file():
            problems.append(
                f"adapter.sandbox_spec does not exist: {config.adapter['sandbox_spec']}"
            )

    for key in ("depth_limit", "max_rounds", "max_patch_rounds", "wall_seconds", "fuzz_seconds"):
        value = config.budget(key)
        try:
            if float(value) <= 0:
                problems.append(f"budgets.{key} must be positive")
        except (TypeError, ValueError):
            problems.append(f"budgets.{key} must be a positive number")
    for role, value in config.budgets.get("max_iterations", {}).items():
        if role not in AgentRole.__members__:
            problems.append(f"budgets.max_iterations has unknown role: {role}")
        elif int(value) < 1:
            problems.append(f"budgets.max_iterations.{role} must be >= 1")

    for key in ("docs_bundle", "source_root", "facts"):
        value = config.target.get(key)
        if value and not config.resolve(value).exists():
            problems.append(f"target.{key} does not exist: {value}")
    return problems
