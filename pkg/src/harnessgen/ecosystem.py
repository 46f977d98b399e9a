"""Toolchain adapters: compile, fuzz, collect coverage.

Two adapters implement the same contract. The sandbox adapter is a
deterministic rule-driven stand-in for a real compiler/fuzzer toolchain,
used for offline end-to-end runs; the shell adapter delegates to
configured commands.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .agents import HarnessArtifact
from .coverage import CoverageReport, MethodCoverage, RecordingTrace, TraceEvent, apply_recording_windows
from .errors import EngineError

DEFAULT_ENTRYPOINT = "fuzzTarget"
DEFAULT_TIMEOUT_GRACE = 5.0

# Sandbox traces use one fixed recording window; rules marked
# in_window=false emit their events before it opens.
_WINDOW = (100.0, 200.0)
_TS_INSIDE = 150.0
_TS_OUTSIDE = 50.0


@dataclass(frozen=True)
class Diagnostic:
    file: str
    line: int
    message: str
    severity: str = "error"


@dataclass(frozen=True)
class CompileResult:
    success: bool
    diagnostics: tuple[Diagnostic, ...] = ()

    def errors(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.severity == "error")


@dataclass(frozen=True)
class Crash:
    artifact_path: str
    dedup_key: str
    summary: str


@dataclass(frozen=True)
class FuzzResult:
    coverage: CoverageReport
    crashes: tuple[Crash, ...] = ()
    executions: int = 0
    wall_seconds: float = 0.0
    timed_out: bool = False


def crash_dedup_key(summary: str) -> str:
    normalized = " ".join(summary.lower().split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()[:16]


def _pattern_matches(pattern: str, text: str) -> bool:
    """Literal substring match, or anchored regex when the pattern starts with '^'."""
    if pattern.startswith("^"):
        return re.search(pattern, text, flags=re.MULTILINE) is not None
    return pattern in text


@dataclass(frozen=True)
class CompileRule:
    pattern: str
    diagnostic: Diagnostic
    when: str = "present"  # present | absent

    def fires(self, source: str) -> bool:
        matched = _pattern_matches(self.pattern, source)
        return matched if self.when == "present" else not matched


@dataclass(frozen=True)
class CoverageRule:
    pattern: str
    methods: dict[str, tuple[float, float]]  # id -> (line fraction, branch fraction)
    in_window: bool = True


@dataclass(frozen=True)
class CrashRule:
    pattern: str
    summary: str


@dataclass
class SandboxSpec:
    base_dir: Path
    docs_bundle: Path
    source_root: Path
    facts: Path
    entrypoint: str = DEFAULT_ENTRYPOINT
    scope: str = "method_targeted"
    method_totals: dict[str, tuple[int, int]] = field(default_factory=dict)
    compile_rules: list[CompileRule] = field(default_factory=list)
    coverage_rules: list[CoverageRule] = field(default_factory=list)
    crash_rules: list[CrashRule] = field(default_factory=list)


def load_sandbox(spec_path: str | Path) -> "SandboxAdapter":
    spec_path = Path(spec_path)
    if not spec_path.is_file():
        raise EngineError("CONFIG", f"sandbox spec not found: {spec_path}")
    try:
        raw = json.loads(spec_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EngineError("PARSE", f"{spec_path}: {exc}") from exc
    base = spec_path.parent
    paths = {}
    for key in ("docs_bundle", "source_root", "facts"):
        if key not in raw:
            raise EngineError("CONFIG", f"{spec_path}: missing {key}")
        resolved = (base / raw[key]).resolve()
        if not resolved.exists():
            raise EngineError("CONFIG", f"{spec_path}: {key} does not exist: {resolved}")
        paths[key] = resolved
    totals = {
        mid: (int(v.get("lines_total", 0)), int(v.get("branches_total", 0)))
        for mid, v in raw.get("method_totals", {}).items()
    }
    compile_rules = [
        CompileRule(
            pattern=r["pattern"],
            when=r.get("when", "present"),
            diagnostic=Diagnostic(
                file=r["diagnostic"].get("file", "harness"),
                line=int(r["diagnostic"].get("line", 1)),
                message=r["diagnostic"].get("message", "compile rule fired"),
                severity=r["diagnostic"].get("severity", "error"),
            ),
        )
        for r in raw.get("compile_rules", [])
    ]
    coverage_rules = [
        CoverageRule(
            pattern=r["pattern"],
            in_window=bool(r.get("in_window", True)),
            methods={
                mid: (float(v.get("line_fraction", 0.0)), float(v.get("branch_fraction", 0.0)))
                for mid, v in r.get("methods", {}).items()
            },
        )
        for r in raw.get("coverage_rules", [])
    ]
    crash_rules = [
        CrashRule(pattern=r["pattern"], summary=r["summary"]) for r in raw.get("crash_rules", [])
    ]
    spec = SandboxSpec(
        base_dir=base,
        docs_bundle=paths["docs_bundle"],
        source_root=paths["source_root"],
        facts=paths["facts"],
        entrypoint=raw.get("entrypoint", DEFAULT_ENTRYPOINT),
        scope=raw.get("scope", "method_targeted"),
        method_totals=totals,
        compile_rules=compile_rules,
        coverage_rules=coverage_rules,
        crash_rules=crash_rules,
    )
    return SandboxAdapter(spec)


class SandboxAdapter:
    """Rule-driven deterministic compiler/fuzzer stand-in."""

    def __init__(self, spec: SandboxSpec) -> None:
        self.spec = spec

    def compile(self, harness: HarnessArtifact) -> CompileResult:
        diagnostics = tuple(
            rule.diagnostic for rule in self.spec.compile_rules if rule.fires(harness.source)
        )
        success = not any(d.severity == "error" for d in diagnostics)
        return CompileResult(success=success, diagnostics=diagnostics)

    def build_trace(self, harness: HarnessArtifact) -> RecordingTrace:
        """Trace synthesized from the coverage rules matching the harness.

        A rule covering fraction f of a method hits line sites 1..ceil(f*total);
        overlapping rules union naturally through the site sets.
        """
        events: list[TraceEvent] = []
        for rule in self.spec.coverage_rules:
            if not _pattern_matches(rule.pattern, harness.source):
                continue
            ts = _TS_INSIDE if rule.in_window else _TS_OUTSIDE
            for mid, (line_frac, branch_frac) in sorted(rule.methods.items()):
                lines_total, branches_total = self.spec.method_totals.get(mid, (0, 0))
                for line in range(1, math.ceil(line_frac * lines_total) + 1):
                    events.append(TraceEvent(mid, line, "line_hit", ts))
                for branch in range(1, math.ceil(branch_frac * branches_total) + 1):
                    events.append(TraceEvent(mid, branch, "branch_hit", ts))
        return RecordingTrace(
            events=tuple(events),
            windows=(_WINDOW,),
            method_totals=dict(self.spec.method_totals),
        )

    def fuzz(
        self,
        harness: HarnessArtifact,
        duration_seconds: float,
        seed_corpus: str | None = None,
        scope: str | None = None,
    ) -> FuzzResult:
        started = time.monotonic()
        scope = scope or self.spec.scope
        trace = self.build_trace(harness)
        if scope == "method_targeted":
            report = apply_recording_windows(trace)
        else:
            # full scope: every event counts regardless of recording windows
            full_trace = RecordingTrace(
                events=trace.events,
                windows=((float("-inf"), float("inf")),),
                method_totals=trace.method_totals,
            )
            filtered = apply_recording_windows(full_trace)
            report = CoverageReport(
                scope="full", methods=filtered.methods, dropped_events=filtered.dropped_events
            )
        report = CoverageReport(
            scope=report.scope,
            methods=report.methods,
            campaign_seconds=float(duration_seconds),
            dropped_events=report.dropped_events,
        )
        matched_cov = sum(
            1 for r in self.spec.coverage_rules if _pattern_matches(r.pattern, harness.source)
        )
        crashes = tuple(
            Crash(
                artifact_path=f"crash-{i:03d}.bin",
                dedup_key=crash_dedup_key(rule.summary),
                summary=rule.summary,
            )
            for i, rule in enumerate(self.spec.crash_rules)
            if _pattern_matches(rule.pattern, harness.source)
        )
        executions = int(duration_seconds) * 1000 + 37 * matched_cov
        return FuzzResult(
            coverage=report,
            crashes=crashes,
            executions=executions,
            wall_seconds=time.monotonic() - started,
        )


class ShellAdapter:
    """Delegates compile/fuzz to configured shell commands.

    Config keys: compile_cmd, fuzz_cmd (with {harness} and {duration}
    placeholders), diagnostic_pattern (regex with file/line/message groups),
    coverage_out (path the fuzz command writes), timeout_grace.
    """

    def __init__(self, config: dict, base_dir: str | Path = ".") -> None:
        for key in ("compile_cmd", "fuzz_cmd", "coverage_out"):
            if key not in config:
                raise EngineError("CONFIG", f"shell adapter missing config key: {key}")
        self.compile_cmd = config["compile_cmd"]
        self.fuzz_cmd = config["fuzz_cmd"]
        self.coverage_out = Path(base_dir) / config["coverage_out"]
        self.timeout_grace = float(config.get("timeout_grace", DEFAULT_TIMEOUT_GRACE))
        pattern = config.get("diagnostic_pattern", r"(?P<file>[^:\s]+):(?P<line>\d+):\s*(?P<message>.+)")
        try:
            self.diagnostic_pattern = re.compile(pattern)
        except re.error as exc:
            raise EngineError("CONFIG", f"invalid diagnostic_pattern: {exc}") from exc

    def _write_harness(self, harness: HarnessArtifact) -> str:
        handle = tempfile.NamedTemporaryFile(
            "w", suffix=".src", delete=False, encoding="utf-8"
        )
        with handle:
            handle.write(harness.source)
        return handle.name

    def compile(self, harness: HarnessArtifact) -> CompileResult:
        path = self._write_harness(harness)
        cmd = self.compile_cmd.format(harness=path)
        try:
            proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
        except OSError as exc:
            raise EngineError("EXEC", f"compile command failed to start: {exc}") from exc
        output = proc.stdout + proc.stderr
        diagnostics = tuple(
            Diagnostic(
                file=m.group("file"),
                line=int(m.group("line")),
                message=m.group("message").strip(),
                severity="error" if proc.returncode != 0 else "warning",
            )
            for m in self.diagnostic_pattern.finditer(output)
        )
        return CompileResult(success=proc.returncode == 0, diagnostics=diagnostics)

    def fuzz(
        self,
        harness: HarnessArtifact,
        duration_seconds: float,
        seed_corpus: str | None = None,
        scope: str | None = None,
    ) -> FuzzResult:
        path = self._write_harness(harness)
        cmd = self.fuzz_cmd.format(harness=path, duration=duration_seconds)
        started = time.monotonic()
        try:
            subprocess.run(
                cmd,
                shell=True,
                capture_output=True,
                text=True,
                timeout=duration_seconds + self.timeout_grace,
            )
        except subprocess.TimeoutExpired as exc:
            raise EngineError(
                "FUZZ_TIMEOUT", f"fuzz command exceeded {duration_seconds}s plus grace: {exc}"
            ) from exc
        except OSError as exc:
            raise EngineError("EXEC", f"fuzz command failed to start: {exc}") from exc
        report = CoverageReport.load(self.coverage_out)
        return FuzzResult(
            coverage=report,
            executions=0,
            wall_seconds=time.monotonic() - started,
        )
