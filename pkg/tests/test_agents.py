from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from harnessgen.agents import (
    CORRECTIVE_PROMPT,
    DEFAULT_MAX_ITERATIONS,
    REPORT_SECTIONS,
    AgentProfile,
    build_research_context,
    load_prompt,
    normalize_and_hash,
    parse_harness_output,
    parse_research_report,
    parse_termination_decision,
    run_react,
)
from harnessgen.errors import EngineError
from harnessgen.model_backend import ScriptTurn, ScriptedBackend, UsageLedger
from harnessgen.toolbus import AgentRole, ToolRequest

GOOD_REPORT = "\n".join(f"## {s}\nnotes about {s.lower()}." for s in REPORT_SECTIONS)

GOOD_HARNESS = """Here is the harness.

```java
public class Fuzz {
    public static void fuzzTarget(byte[] data) {
        // drive the target
    }
}
```

DEPENDENCIES:
toylib.ArgParser
toylib.Token
"""


class TestPrompts:
    def test_every_role_has_a_prompt(self):
        for role in AgentRole:
            text = load_prompt(role)
            assert len(text) > 100

    def test_default_profiles(self):
        for role in AgentRole:
            profile = AgentProfile.default(role)
            assert profile.max_iterations == DEFAULT_MAX_ITERATIONS[role]

    def test_iteration_override(self):
        assert AgentProfile.default(AgentRole.GEN, max_iterations=3).max_iterations == 3


class TestResearchParser:
    def test_all_sections_accepted(self):
        assert parse_research_report(GOOD_REPORT).markdown == GOOD_REPORT

    @pytest.mark.parametrize("missing", REPORT_SECTIONS)
    def test_each_missing_section_rejected(self, missing):
        partial = "\n".join(f"## {s}\nx" for s in REPORT_SECTIONS if s != missing)
        with pytest.raises(EngineError) as exc:
            parse_research_report(partial)
        assert exc.value.code == "PARSE" and missing in exc.value.message

    def test_heading_level_and_case_flexible(self):
        text = "\n".join(f"### {s.upper()}\nx" for s in REPORT_SECTIONS)
        parse_research_report(text)


class TestHarnessParser:
    def test_source_and_dependencies(self):
        artifact = parse_harness_output(GOOD_HARNESS)
        assert artifact.source.startswith("public class Fuzz")
        assert artifact.dependencies == ("toylib.ArgParser", "toylib.Token")
        assert artifact.normalized_hash == normalize_and_hash(artifact.source)

    def test_first_fence_wins(self):
        text = "```java\nFIRST\n```\nand\n```java\nSECOND\n```"
        assert parse_harness_output(text).source == "FIRST"

    def test_no_code_block(self):
        with pytest.raises(EngineError) as exc:
            parse_harness_output("just prose, no code")
        assert exc.value.code == "PARSE_NO_CODE"

    def test_empty_block(self):
        with pytest.raises(EngineError) as exc:
            parse_harness_output("```java\n\n   \n```")
        assert exc.value.code == "PARSE_EMPTY"

    def test_no_dependencies_marker(self):
        artifact = parse_harness_output("```java\nX\n```\ntrailing prose")
        assert artifact.dependencies == ()

    def test_dependency_list_ends_at_blank_line(self):
        text = "```java\nX\n```\nDEPENDENCIES:\na.B\n\nc.D should be ignored"
        assert parse_harness_output(text).dependencies == ("a.B",)


class TestDecisionParser:
    def test_stop_decision(self):
        text = '```json\n{"decision": "stop", "rationale": "plateau"}\n```'
        decision = parse_termination_decision(text)
        assert decision.decision == "stop" and decision.rationale == "plateau"

    def test_continue_requires_priorities(self):
        with pytest.raises(EngineError) as exc:
            parse_termination_decision('```json\n{"decision": "continue"}\n```')
        assert exc.value.code == "PARSE"

    def test_continue_with_priorities(self):
        text = '{"decision": "continue", "priority_methods": ["a.b()"], "strategy": "widen"}'
        decision = parse_termination_decision(text)
        assert decision.priority_methods == ("a.b()",)
        assert decision.strategy == "widen"

    def test_bare_json_outside_fence(self):
        text = 'I think we should stop. {"decision": "stop"} That is all.'
        assert parse_termination_decision(text).decision == "stop"

    def test_unknown_decision_value(self):
        with pytest.raises(EngineError):
            parse_termination_decision('{"decision": "maybe"}')

    def test_no_json_at_all(self):
        with pytest.raises(EngineError) as exc:
            parse_termination_decision("no structured content here")
        assert exc.value.code == "PARSE"


class TestNormalizeHash:
    def test_comment_and_whitespace_invariance(self):
        a = "int  x = 1;\n// note\nint y = 2;"
        b = "int x = 1; /* other note */ int y = 2;"
        assert normalize_and_hash(a) == normalize_and_hash(b)

    def test_code_change_changes_hash(self):
        assert normalize_and_hash("int x = 1;") != normalize_and_hash("int x = 2;")

    @given(st.text(max_size=200))
    def test_idempotent_under_outer_whitespace(self, source):
        assert normalize_and_hash(source) == normalize_and_hash(f"  {source}\n\n")


class TestRunReact:
    def _profile(self, role=AgentRole.GEN, max_iterations=5):
        return AgentProfile.default(role, max_iterations=max_iterations)

    def test_direct_final_answer(self, registry):
        backend = ScriptedBackend([ScriptTurn(text=GOOD_HARNESS)])
        result = run_react(self._profile(), [("task", "write it")], registry, backend)
        assert result.status == "OK"
        assert result.parsed_output.dependencies == ("toylib.ArgParser", "toylib.Token")
        assert result.transcript.iterations == 1

    def test_tool_iteration_then_answer(self, registry):
        backend = ScriptedBackend(
            [
                ScriptTurn(tool_calls=[ToolRequest("list_packages", {})]),
                ScriptTurn(text=GOOD_HARNESS, expect_contains="toylib"),
            ]
        )
        ledger = UsageLedger()
        result = run_react(
            self._profile(), [("task", "go")], registry, backend, ledger=ledger, round_index=2
        )
        assert result.status == "OK"
        assert result.transcript.iterations == 2
        assert result.transcript.tool_call_count == 1
        entry = ledger.entries()[(AgentRole.GEN, 2)]
        assert entry["iterations"] == 2 and entry["tool_calls"] == 1

    def test_denied_tool_becomes_observation(self, registry):
        # GEN may not call path_to_method; the loop must surface the error text
        backend = ScriptedBackend(
            [
                ScriptTurn(tool_calls=[ToolRequest("path_to_method", {"target": "x"})]),
                ScriptTurn(text=GOOD_HARNESS, expect_contains="ERROR ACCESS_DENIED"),
            ]
        )
        result = run_react(self._profile(), [("task", "go")], registry, backend)
        assert result.status == "OK"
        assert result.transcript.steps[0].tool_results[0]["ok"] is False

    def test_corrective_reprompt_once(self, registry):
        backend = ScriptedBackend(
            [
                ScriptTurn(text="not a harness"),
                ScriptTurn(text=GOOD_HARNESS, expect_contains=CORRECTIVE_PROMPT),
            ]
        )
        result = run_react(self._profile(), [("task", "go")], registry, backend)
        assert result.status == "OK" and result.transcript.iterations == 2

    def test_second_parse_failure_is_fatal(self, registry):
        backend = ScriptedBackend(
            [ScriptTurn(text="still prose"), ScriptTurn(text="more prose")]
        )
        result = run_react(self._profile(), [("task", "go")], registry, backend)
        assert result.status == "FAILED_PARSE"
        assert result.transcript.iterations == 2
        assert result.last_text == "more prose"

    def test_iteration_budget_exhaustion(self, registry):
        backend = ScriptedBackend(
            [ScriptTurn(tool_calls=[ToolRequest("list_packages", {})]) for _ in range(9)]
        )
        result = run_react(
            self._profile(max_iterations=3), [("task", "go")], registry, backend
        )
        assert result.status == "FAILED_PARSE"
        assert result.transcript.iterations == 3

    def test_transcript_serializes(self, registry):
        backend = ScriptedBackend(
            [
                ScriptTurn(tool_calls=[ToolRequest("list_packages", {})]),
                ScriptTurn(text=GOOD_HARNESS),
            ]
        )
        result = run_react(self._profile(), [("task", "go")], registry, backend)
        blob = result.transcript.to_json()
        assert blob["role"] == "GEN" and blob["iterations"] == 2
        assert blob["steps"][0]["tool_calls"][0]["tool"] == "list_packages"
        assert blob["steps"][0]["tool_results"][0]["ok"] is True


class _Target:
    target_class = "ArgParser"
    target_method = "parse(String[])"


class TestResearchContext:
    def test_full_context(self, docs_index, code_index):
        blocks = dict(build_research_context(_Target(), docs_index, code_index))
        assert blocks["target signature"] == "ArgParser.parse(String[])"
        assert "ParseException" in blocks["target documentation"]
        assert "parse" in blocks["target source"]

    def test_docs_only(self, docs_index):
        blocks = build_research_context(_Target(), docs_index, None)
        labels = [label for label, _ in blocks]
        assert "target documentation" in labels and "note" in labels

    def test_neither_found(self):
        with pytest.raises(EngineError) as exc:
            build_research_context(_Target(), None, None)
        assert exc.value.code == "TARGET_NOT_FOUND"
