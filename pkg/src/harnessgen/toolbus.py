"""Tool registry and dispatcher with per-agent-role access control.

Sixteen tools across four categories (docs, code, callgraph, exec) are
registered against backing services. Each agent role sees a fixed access
level per tool; dispatch enforces the matrix and always returns a
ToolResponse, never raises past the caller.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping

from .errors import EngineError

DEFAULT_RESPONSE_BUDGET = 8000

Scalar = str | int | float | bool


class AgentRole(str, Enum):
    RSH = "RSH"  # research
    GEN = "GEN"  # generation
    PAT = "PAT"  # patching
    CVA = "CVA"  # coverage analysis
    REF = "REF"  # refinement


class AccessLevel(str, Enum):
    ALLOWED = "allowed"
    DENIED = "denied"
    STATIC_ONLY = "static_only"  # invoked by the orchestrator, not queryable


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    category: str  # docs | code | callgraph | exec
    param_schema: Mapping[str, Mapping[str, Any]]  # param -> {"type", "required"}
    description: str


@dataclass(frozen=True)
class ToolRequest:
    tool: str
    args: Mapping[str, Scalar] = field(default_factory=dict)

    def to_wire(self) -> dict[str, Any]:
        return {"tool": self.tool, "args": dict(self.args)}

    @classmethod
    def from_wire(cls, payload: Mapping[str, Any]) -> "ToolRequest":
        return cls(tool=str(payload["tool"]), args=dict(payload.get("args", {})))


@dataclass(frozen=True)
class ToolResponse:
    ok: bool
    content: str = ""
    truncated: bool = False
    error_code: str | None = None
    error_message: str | None = None

    def to_wire(self) -> dict[str, Any]:
        if self.ok:
            return {"ok": True, "content": self.content, "truncated": self.truncated}
        return {"ok": False, "error": {"code": self.error_code, "message": self.error_message}}


def _error(code: str, message: str) -> ToolResponse:
    return ToolResponse(ok=False, error_code=code, error_message=message)


# Per-tool access rows for the non-uniform tools; docs/code tools are
# allowed for every role.
_RESTRICTED_ACCESS: dict[str, dict[AgentRole, AccessLevel]] = {
    "reach_methods": {AgentRole.CVA: AccessLevel.STATIC_ONLY},
    "path_to_method": {AgentRole.CVA: AccessLevel.ALLOWED},
    "compile": {AgentRole.PAT: AccessLevel.STATIC_ONLY},
    "fuzz": {AgentRole.CVA: AccessLevel.STATIC_ONLY},
}


def default_access(tool: str, category: str, role: AgentRole) -> AccessLevel:
    if category in ("docs", "code"):
        return AccessLevel.ALLOWED
    return _RESTRICTED_ACCESS.get(tool, {}).get(role, AccessLevel.DENIED)


class ToolRegistry:
    """Immutable-after-construction registry of tools plus ACL."""

    def __init__(self, response_budget: int = DEFAULT_RESPONSE_BUDGET) -> None:
        self._descriptors: dict[str, ToolDescriptor] = {}
        self._handlers: dict[str, Callable[..., str] | None] = {}
        self._access: dict[str, dict[AgentRole, AccessLevel]] = {}
        self.response_budget = response_budget

    def register(
        self,
        descriptor: ToolDescriptor,
        handler: Callable[..., str] | None,
        access: Mapping[AgentRole, AccessLevel] | None = None,
    ) -> None:
        if descriptor.name in self._descriptors:
            raise EngineError("CONFIG", f"tool already registered: {descriptor.name}")
        self._descriptors[descriptor.name] = descriptor
        self._handlers[descriptor.name] = handler
        if access is None:
            access = {
                role: default_access(descriptor.name, descriptor.category, role)
                for role in AgentRole
            }
        self._access[descriptor.name] = dict(access)

    @property
    def descriptors(self) -> list[ToolDescriptor]:
        return list(self._descriptors.values())

    def descriptor(self, tool: str) -> ToolDescriptor:
        try:
            return self._descriptors[tool]
        except KeyError:
            raise EngineError("NOT_FOUND", f"unknown tool: {tool}") from None

    def check_access(self, role: AgentRole, tool: str) -> AccessLevel:
        if tool not in self._access:
            raise EngineError("NOT_FOUND", f"unknown tool: {tool}")
        return self._access[tool][role]

    def list_tools(self, role: AgentRole) -> list[ToolDescriptor]:
        """Descriptors visible to a role (allowed or static_only)."""
        return [
            d
            for d in self._descriptors.values()
            if self._access[d.name][role] is not AccessLevel.DENIED
        ]

    def invoke_exec(self, tool: str, **kwargs: Any) -> Any:
        """Direct invocation path for exec tools, orchestrator only."""
        handler = self._handlers.get(tool)
        if handler is None:
            raise EngineError("NOT_FOUND", f"no handler for tool: {tool}")
        return handler(**kwargs)

    def dispatch(self, role: AgentRole, request: ToolRequest) -> ToolResponse:
        """Execute a tool request for a role; errors come back as responses."""
        try:
            descriptor = self._descriptors.get(request.tool)
            if descriptor is None:
                return _error("NOT_FOUND", f"unknown tool: {request.tool}")
            level = self._access[request.tool][role]
            if level is AccessLevel.DENIED:
                return _error("ACCESS_DENIED", f"{role.value} may not use {request.tool}")
            if level is AccessLevel.STATIC_ONLY:
                return _error(
                    "NOT_QUERYABLE",
                    f"{request.tool} is invoked by the orchestrator, not queryable",
                )
            problem = self._validate_args(descriptor, request.args)
            if problem:
                return _error("BAD_ARGS", problem)
            handler = self._handlers[request.tool]
            if handler is None:
                return _error("BACKEND_ERROR", f"no handler bound for {request.tool}")
            content = handler(**dict(request.args))
            if not isinstance(content, str):
                content = json.dumps(content, sort_keys=True)
            return self._truncate(content)
        except EngineError as exc:
            return _error(exc.code, exc.message)
        except Exception as exc:  # backend failures become observations
            return _error("BACKEND_ERROR", f"{type(exc).__name__}: {exc}")

    @staticmethod
    def _validate_args(descriptor: ToolDescriptor, args: Mapping[str, Scalar]) -> str | None:
        for name, spec in descriptor.param_schema.items():
            if spec.get("required", True) and name not in args:
                return f"missing required argument: {name}"
        for name, value in args.items():
            if name not in descriptor.param_schema:
                return f"unexpected argument: {name}"
            if not isinstance(value, (str, int, float, bool)):
                return f"argument {name} must be a scalar"
        return None

    def _truncate(self, content: str) -> ToolResponse:
        if len(content) <= self.response_budget:
            return ToolResponse(ok=True, content=content)
        cut = content.rfind("\n", 0, self.response_budget)
        if cut <= 0:
            cut = self.response_budget
        return ToolResponse(ok=True, content=content[:cut], truncated=True)


def _param(name: str, required: bool = True, type_: str = "string") -> dict[str, dict[str, Any]]:
    return {name: {"type": type_, "required": required}}


def register_default_tools(registry: ToolRegistry, docs_index, code_index, callgraph, ecosystem) -> ToolRegistry:
    """Register the standard 16 tools against the four backing services."""
    docs_tools = [
        ("method_doc", _param("qualifier"), "Documentation for a method signature",
         lambda qualifier: docs_index.query_doc("method", qualifier)),
        ("class_doc", _param("qualifier"), "Documentation for a class",
         lambda qualifier: docs_index.query_doc("class", qualifier)),
        ("package_doc", _param("qualifier"), "Documentation for a package",
         lambda qualifier: docs_index.query_doc("package", qualifier)),
        ("list_packages", {}, "List all documented packages",
         lambda: "\n".join(docs_index.list_entities("packages"))),
        ("list_classes", _param("package"), "List classes in a package",
         lambda package: "\n".join(docs_index.list_entities("classes", package))),
        ("list_methods", _param("class_name"), "List method signatures of a class",
         lambda class_name: "\n".join(docs_index.list_entities("methods", class_name))),
    ]
    code_tools = [
        ("get_method_code", _param("qualifier"), "Source snippet of a method",
         lambda qualifier: code_index.get_code("method", qualifier)),
        ("get_class_code", _param("qualifier"), "Source snippet of a class",
         lambda qualifier: code_index.get_code("class", qualifier)),
        ("find_definition", {**_param("symbol"), **_param("max_results", False, "integer")},
         "Declaration sites of a symbol",
         lambda symbol, max_results=20: code_index.render_search("definition", symbol, int(max_results))),
        ("find_refs", {**_param("symbol"), **_param("max_results", False, "integer")},
         "References to a symbol outside its declaration",
         lambda symbol, max_results=20: code_index.render_search("refs", symbol, int(max_results))),
        ("grep", {**_param("pattern"), **_param("max_results", False, "integer")},
         "Search source lines by literal or regex",
         lambda pattern, max_results=20: code_index.render_search("text", pattern, int(max_results))),
        ("find_symbol", {**_param("name"), **_param("max_results", False, "integer")},
         "Symbols whose name contains the query",
         lambda name, max_results=20: code_index.render_search("symbol", name, int(max_results))),
    ]
    cg_tools = [
        ("reach_methods", {**_param("from_id"), **_param("max_depth", False, "integer")},
         "Methods reachable from a node within a depth bound",
         lambda from_id, max_depth=10: "\n".join(
             f"{entry['relative_depth']} {entry['id']}"
             for entry in callgraph.reach_methods(from_id, int(max_depth))
         )),
        ("path_to_method", _param("target"), "Shortest call path from the root to a method",
         lambda target: " -> ".join(callgraph.path_to_method(target))),
    ]
    exec_tools = [
        ("compile", _param("harness"), "Compile a harness (orchestrator-invoked)",
         (lambda harness: ecosystem.compile(harness)) if ecosystem is not None else None),
        ("fuzz", {**_param("harness"), **_param("duration_seconds", True, "number")},
         "Run a fuzzing campaign (orchestrator-invoked)",
         (lambda harness, duration_seconds, **kw: ecosystem.fuzz(harness, duration_seconds, **kw))
         if ecosystem is not None else None),
    ]
    groups = [
        ("docs", docs_tools, docs_index),
        ("code", code_tools, code_index),
        ("callgraph", cg_tools, callgraph),
        ("exec", exec_tools, ecosystem),
    ]
    for category, tools, service in groups:
        if service is None:
            continue
        for name, schema, desc, handler in tools:
            registry.register(ToolDescriptor(name, category, schema, desc), handler)
    return registry
