"""Generic ReAct loop plus the five agent profiles and their output parsers."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import EngineError
from .model_backend import Conversation, Message, ModelBackend, UsageLedger
from .toolbus import AgentRole, ToolRegistry, ToolRequest

DEFAULT_MAX_ITERATIONS = {
    AgentRole.RSH: 25,
    AgentRole.GEN: 8,
    AgentRole.PAT: 10,
    AgentRole.CVA: 25,
    AgentRole.REF: 15,
}

REPORT_SECTIONS = (
    "Target Overview",
    "Initialization Requirements",
    "Input Construction",
    "Exception Contract",
    "API Paths Of Interest",
    "Open Risks",
)

CORRECTIVE_PROMPT = "Your last message was not in the required format. Respond in the required format."

STATUS_OK = "OK"
STATUS_FAILED_PARSE = "FAILED_PARSE"


def load_prompt(role: AgentRole) -> str:
    name = f"{role.value.lower()}.md"
    return resources.files("harnessgen.prompts").joinpath(name).read_text(encoding="utf-8")


# -- parsed outputs ----------------------------------------------------------


@dataclass(frozen=True)
class ResearchReport:
    markdown: str


@dataclass(frozen=True)
class HarnessArtifact:
    source: str
    dependencies: tuple[str, ...]
    normalized_hash: str


@dataclass(frozen=True)
class TerminationDecision:
    decision: str  # stop | continue
    rationale: str = ""
    priority_methods: tuple[str, ...] = ()
    strategy: str = ""


def parse_research_report(text: str) -> ResearchReport:
    for section in REPORT_SECTIONS:
        pattern = rf"^#{{1,6}}\s*{re.escape(section)}\s*$"
        if not re.search(pattern, text, flags=re.MULTILINE | re.IGNORECASE):
            raise EngineError("PARSE", f"research report missing section: {section}")
    return ResearchReport(markdown=text)


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)


def parse_harness_output(text: str) -> HarnessArtifact:
    match = _FENCE_RE.search(text)
    if match is None:
        raise EngineError("PARSE_NO_CODE", "no fenced code block in model output")
    source = match.group(1).strip("\n")
    if not source.strip():
        raise EngineError("PARSE_EMPTY", "fenced code block is empty")
    dependencies: list[str] = []
    tail = text[match.end() :]
    lines = iter(tail.splitlines())
    for line in lines:
        if line.strip() == "DEPENDENCIES:":
            for dep in lines:
                dep = dep.strip()
                if not dep:
                    break
                dependencies.append(dep)
            break
    return HarnessArtifact(
        source=source,
        dependencies=tuple(dependencies),
        normalized_hash=normalize_and_hash(source),
    )


def parse_termination_decision(text: str) -> TerminationDecision:
    payload = None
    for candidate in _FENCE_RE.findall(text):
        try:
            payload = json.loads(candidate)
            break
        except json.JSONDecodeError:
            continue
    if payload is None:
        decoder = json.JSONDecoder()
        for start in (m.start() for m in re.finditer(r"\{", text)):
            try:
                payload, _ = decoder.raw_decode(text, start)
                break
            except json.JSONDecodeError:
                continue
    if not isinstance(payload, dict):
        raise EngineError("PARSE", "no JSON decision object in model output")
    decision = payload.get("decision")
    if decision not in ("stop", "continue"):
        raise EngineError("PARSE", f"decision must be stop or continue, got {decision!r}")
    priority = tuple(payload.get("priority_methods") or ())
    if decision == "continue" and not priority:
        raise EngineError("PARSE", "continue decision requires non-empty priority_methods")
    return TerminationDecision(
        decision=decision,
        rationale=str(payload.get("rationale", "")),
        priority_methods=priority,
        strategy=str(payload.get("strategy", "")),
    )


_BLOCK_COMMENT_RE = re.compile(r"/\*.*?\*/", re.DOTALL)
_LINE_COMMENT_RE = re.compile(r"//[^\n]*")


def normalize_and_hash(source: str) -> str:
    """Digest of the source with comments stripped and whitespace collapsed."""
    stripped = _BLOCK_COMMENT_RE.sub(" ", source)
    stripped = _LINE_COMMENT_RE.sub(" ", stripped)
    normalized = " ".join(stripped.split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


# -- profiles ----------------------------------------------------------------

OUTPUT_PARSERS = {
    AgentRole.RSH: parse_research_report,
    AgentRole.GEN: parse_harness_output,
    AgentRole.PAT: parse_harness_output,
    AgentRole.CVA: parse_termination_decision,
    AgentRole.REF: parse_harness_output,
}


@dataclass(frozen=True)
class AgentProfile:
    role: AgentRole
    system_prompt: str
    max_iterations: int
    output_parser: object  # callable(str) -> parsed output

    @classmethod
    def default(cls, role: AgentRole, max_iterations: int | None = None) -> "AgentProfile":
        return cls(
            role=role,
            system_prompt=load_prompt(role),
            max_iterations=max_iterations or DEFAULT_MAX_ITERATIONS[role],
            output_parser=OUTPUT_PARSERS[role],
        )


# -- ReAct loop ----------------------------------------------------------------


@dataclass
class TranscriptStep:
    text: str | None = None
    tool_calls: list[dict] = field(default_factory=list)
    tool_results: list[dict] = field(default_factory=list)


@dataclass
class AgentTranscript:
    role: str
    steps: list[TranscriptStep] = field(default_factory=list)
    iterations: int = 0
    tool_call_count: int = 0

    def to_json(self) -> dict:
        return {
            "role": self.role,
            "iterations": self.iterations,
            "tool_call_count": self.tool_call_count,
            "steps": [
                {
                    "text": s.text,
                    "tool_calls": s.tool_calls,
                    "tool_results": s.tool_results,
                }
                for s in self.steps
            ],
        }


@dataclass
class AgentRunResult:
    status: str  # OK | FAILED_PARSE
    transcript: AgentTranscript
    parsed_output: object | None = None
    last_text: str | None = None


def run_react(
    profile: AgentProfile,
    seed_context: list[tuple[str, str]],
    registry: ToolRegistry,
    backend: ModelBackend,
    ledger: UsageLedger | None = None,
    round_index: int = 0,
) -> AgentRunResult:
    """Drive one agent to a parseable final answer or iteration exhaustion.

    Tool calls returned by the model are dispatched through the registry;
    errors (including access denials) come back as observations so the
    model can adjust.
    """
    conversation = Conversation()
    conversation.add(Message(role="system", content=profile.system_prompt))
    seed_text = "\n\n".join(f"[{label}]\n{text}" for label, text in seed_context)
    conversation.add(Message(role="user", content=seed_text))
    tools = registry.list_tools(profile.role)
    transcript = AgentTranscript(role=profile.role.value)
    corrective_used = False
    last_text: str | None = None

    while transcript.iterations < profile.max_iterations:
        turn = backend.complete(conversation, tools)
        transcript.iterations += 1
        if ledger is not None:
            ledger.record(
                profile.role,
                round_index,
                iterations=1,
                tool_calls=len(turn.tool_calls),
                tokens_in=turn.usage.tokens_in,
                tokens_out=turn.usage.tokens_out,
            )
        step = TranscriptStep(text=turn.text)
        conversation.add(Message(role="assistant", content=turn.text or "", tool_calls=turn.tool_calls))
        if turn.tool_calls:
            for i, call in enumerate(turn.tool_calls):
                response = registry.dispatch(profile.role, call)
                step.tool_calls.append(call.to_wire())
                step.tool_results.append(response.to_wire())
                transcript.tool_call_count += 1
                observation = (
                    response.content
                    if response.ok
                    else f"ERROR {response.error_code}: {response.error_message}"
                )
                conversation.add(
                    Message(role="tool", content=observation, tool_call_id=f"call_{i}")
                )
            transcript.steps.append(step)
            continue
        transcript.steps.append(step)
        last_text = turn.text or ""
        try:
            parsed = profile.output_parser(last_text)
        except EngineError:
            if not corrective_used and transcript.iterations < profile.max_iterations:
                corrective_used = True
                conversation.add(Message(role="user", content=CORRECTIVE_PROMPT))
                continue
            break
        return AgentRunResult(
            status=STATUS_OK, transcript=transcript, parsed_output=parsed, last_text=last_text
        )
    return AgentRunResult(status=STATUS_FAILED_PARSE, transcript=transcript, last_text=last_text)


def build_research_context(target, docs_index, code_index) -> list[tuple[str, str]]:
    """Seed blocks for the research agent: signature, docs, source."""
    qualifier = f"{target.target_class}.{target.target_method}"
    blocks: list[tuple[str, str]] = [("target signature", qualifier)]
    doc_text = None
    code_text = None
    if docs_index is not None:
        try:
            doc_text = docs_index.query_doc("method", qualifier)
        except EngineError:
            doc_text = None
    if code_index is not None:
        try:
            code_text = code_index.get_code("method", qualifier)
        except EngineError:
            code_text = None
    if doc_text is None and code_text is None:
        raise EngineError(
            "TARGET_NOT_FOUND", f"target method not found in docs or code index: {qualifier}"
        )
    if doc_text is not None:
        blocks.append(("target documentation", doc_text))
    else:
        blocks.append(("note", "no documentation found for the target method"))
    if code_text is not None:
        blocks.append(("target source", code_text))
    else:
        blocks.append(("note", "no source snippet found for the target method"))
    return blocks
