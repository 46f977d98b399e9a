"""Source indexing for the code tools: snippets, definitions, refs, grep.

The symbol scanner is a line-oriented heuristic over brace-delimited
declarations (Java-like syntax), not a real parser. That is good enough
for agent consumption; fixture tests pin its behavior.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EngineError

DEFAULT_EXTENSIONS = (".java", ".tl")

_MODIFIERS = r"(?:(?:public|private|protected|static|final|abstract|synchronized)\s+)*"
_CLASS_RE = re.compile(rf"^\s*{_MODIFIERS}(?:class|interface|enum)\s+(\w+)")
_METHOD_RE = re.compile(
    rf"^\s*{_MODIFIERS}(?:[\w<>\[\],.\s]+?\s+)?(\w+)\s*\(([^)]*)\)\s*\{{"
)
_FIELD_RE = re.compile(
    rf"^\s*{_MODIFIERS}[\w<>\[\],.]+\s+(\w+)\s*(?:=[^;]*)?;\s*$"
)
_CONTROL_KEYWORDS = {"if", "for", "while", "switch", "catch", "return", "new", "else", "do"}


@dataclass
class SymbolEntry:
    name: str
    kind: str  # class | method | field
    file: str
    line_start: int
    line_end: int
    container: str | None = None


@dataclass
class SourceUnit:
    path: str
    text: str
    symbols: list[SymbolEntry] = field(default_factory=list)


@dataclass(frozen=True)
class SearchHit:
    path: str
    line: int
    excerpt: str


@dataclass(frozen=True)
class SearchResult:
    hits: tuple[SearchHit, ...]
    truncated: bool


def _strip_line_noise(line: str) -> str:
    """Drop string literals and trailing // comments for matching purposes."""
    line = re.sub(r'"(?:[^"\\]|\\.)*"', '""', line)
    idx = line.find("//")
    if idx >= 0:
        line = line[:idx]
    return line


def _signature(name: str, params: str) -> str:
    types = []
    for part in params.split(","):
        part = part.strip()
        if not part:
            continue
        tokens = part.split()
        types.append(tokens[0] if len(tokens) > 1 else part)
    return f"{name}({','.join(types)})"


def _scan_file(path: str, text: str) -> list[SymbolEntry]:
    symbols: list[SymbolEntry] = []
    stack: list[tuple[SymbolEntry, int]] = []  # (symbol, depth before its brace)
    depth = 0
    in_block_comment = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw
        if in_block_comment:
            end = line.find("*/")
            if end < 0:
                continue
            line = line[end + 2 :]
            in_block_comment = False
        start = line.find("/*")
        if start >= 0:
            end = line.find("*/", start + 2)
            if end < 0:
                in_block_comment = True
                line = line[:start]
            else:
                line = line[:start] + line[end + 2 :]
        clean = _strip_line_noise(line)
        container = next(
            (sym.name for sym, _ in reversed(stack) if sym.kind == "class"), None
        )
        pending: SymbolEntry | None = None
        m = _CLASS_RE.match(clean)
        if m:
            pending = SymbolEntry(m.group(1), "class", path, lineno, lineno, container)
            symbols.append(pending)
        else:
            m = _METHOD_RE.match(clean)
            if m and m.group(1) not in _CONTROL_KEYWORDS:
                pending = SymbolEntry(
                    _signature(m.group(1), m.group(2)), "method", path, lineno, lineno, container
                )
                symbols.append(pending)
            else:
                m = _FIELD_RE.match(clean)
                if m and container is not None and not stack_has_method(stack):
                    symbols.append(
                        SymbolEntry(m.group(1), "field", path, lineno, lineno, container)
                    )
        for ch in clean:
            if ch == "{":
                if pending is not None:
                    stack.append((pending, depth))
                    pending = None
                depth += 1
            elif ch == "}":
                depth -= 1
                if stack and depth == stack[-1][1]:
                    sym, _ = stack.pop()
                    sym.line_end = lineno
    # unbalanced input: close any leftovers at EOF
    total_lines = text.count("\n") + 1
    for sym, _ in stack:
        sym.line_end = total_lines
    return symbols


def stack_has_method(stack: list[tuple[SymbolEntry, int]]) -> bool:
    return any(sym.kind == "method" for sym, _ in stack)


class CodeIndex:
    def __init__(self, units: list[SourceUnit]) -> None:
        self.units = {u.path: u for u in units}
        self.symbols: list[SymbolEntry] = [s for u in units for s in u.symbols]

    # -- construction -----------------------------------------------------

    @classmethod
    def build(
        cls,
        source_root: str | Path,
        extensions: tuple[str, ...] = DEFAULT_EXTENSIONS,
        warn=None,
    ) -> "CodeIndex":
        root = Path(source_root)
        if not root.is_dir():
            raise EngineError("IO", f"source root not found: {root}")
        units = []
        for file in sorted(root.rglob("*")):
            if not file.is_file() or file.suffix not in extensions:
                continue
            rel = file.relative_to(root).as_posix()
            try:
                text = file.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                if warn is not None:
                    warn(f"skipping unreadable file {rel}: {exc}")
                continue
            units.append(SourceUnit(path=rel, text=text, symbols=_scan_file(rel, text)))
        if not units:
            raise EngineError("INDEX_EMPTY", f"no indexable files under {root}")
        return cls(units)

    # -- snippet retrieval --------------------------------------------------

    def _candidates(self, kind: str, qualifier: str) -> list[SymbolEntry]:
        want_kind = "method" if kind == "method" else "class"
        container = None
        name = qualifier
        if kind == "method" and "." in qualifier.split("(")[0]:
            container, _, name = qualifier.rpartition(".")
            container = container.split(".")[-1]
        exact = [
            s
            for s in self.symbols
            if s.kind == want_kind
            and s.name == name
            and (container is None or s.container == container)
        ]
        if exact or kind != "method" or "(" in qualifier:
            return exact
        # bare method name fallback
        return [
            s
            for s in self.symbols
            if s.kind == "method"
            and s.name.split("(")[0] == name
            and (container is None or s.container == container)
        ]

    def get_code(self, kind: str, qualifier: str) -> str:
        if kind not in ("method", "class"):
            raise EngineError("BAD_ARGS", f"unknown snippet kind: {kind}")
        found = self._candidates(kind, qualifier)
        if not found:
            pool = [s.name for s in self.symbols if s.kind == ("method" if kind == "method" else "class")]
            prefix = qualifier.split(".")[-1].split("(")[0].lower()
            suggestions = sorted({n for n in pool if n.lower().startswith(prefix)})[:5]
            hint = f"; did you mean: {', '.join(suggestions)}" if suggestions else ""
            raise EngineError("NOT_FOUND", f"unknown {kind}: {qualifier}{hint}")
        if len(found) > 1:
            names = sorted(f"{s.file}:{s.line_start} {s.container or ''}.{s.name}" for s in found)
            raise EngineError("AMBIGUOUS", f"{qualifier} matches: {'; '.join(names)}")
        sym = found[0]
        unit = self.units[sym.file]
        lines = unit.text.splitlines()
        body = "\n".join(lines[sym.line_start - 1 : sym.line_end])
        return f"// {sym.file}:{sym.line_start}-{sym.line_end}\n{body}"

    # -- search --------------------------------------------------------------

    def search(self, kind: str, query: str, max_results: int) -> SearchResult:
        if max_results <= 0:
            raise EngineError("BAD_ARGS", "max_results must be positive")
        if kind == "definition":
            hits = self._definition_hits(query)
        elif kind == "refs":
            hits = self._ref_hits(query)
        elif kind == "symbol":
            needle = query.lower()
            hits = [
                self._decl_hit(s) for s in self.symbols if needle in s.name.lower()
            ]
        elif kind == "text":
            try:
                pattern = re.compile(query)
            except re.error as exc:
                raise EngineError("BAD_ARGS", f"invalid regular expression: {exc}") from exc
            hits = [
                SearchHit(u.path, i, line.strip())
                for u in self.units.values()
                for i, line in enumerate(u.text.splitlines(), 1)
                if pattern.search(line)
            ]
        else:
            raise EngineError("BAD_ARGS", f"unknown search kind: {kind}")
        hits.sort(key=lambda h: (h.path, h.line))
        truncated = len(hits) > max_results
        return SearchResult(hits=tuple(hits[:max_results]), truncated=truncated)

    def render_search(self, kind: str, query: str, max_results: int) -> str:
        result = self.search(kind, query, max_results)
        lines = [f"{h.path}:{h.line}: {h.excerpt}" for h in result.hits]
        if result.truncated:
            lines.append(f"... results truncated at {max_results}")
        return "\n".join(lines) if lines else "(no matches)"

    def _decl_hit(self, sym: SymbolEntry) -> SearchHit:
        line = self.units[sym.file].text.splitlines()[sym.line_start - 1].strip()
        return SearchHit(sym.file, sym.line_start, line)

    def _matching_symbols(self, name: str) -> list[SymbolEntry]:
        return [
            s
            for s in self.symbols
            if s.name == name or (s.kind == "method" and s.name.split("(")[0] == name)
        ]

    def _definition_hits(self, name: str) -> list[SearchHit]:
        return [self._decl_hit(s) for s in self._matching_symbols(name)]

    def _ref_hits(self, name: str) -> list[SearchHit]:
        token = name.split("(")[0]
        decl_lines = {
            (s.file, s.line_start) for s in self._matching_symbols(name)
        }
        word = re.compile(rf"\b{re.escape(token)}\b")
        hits = []
        for unit in self.units.values():
            for i, line in enumerate(unit.text.splitlines(), 1):
                clean = _strip_line_noise(line)
                if clean.strip().startswith("*"):  # block-comment body heuristic
                    continue
                if word.search(clean) and (unit.path, i) not in decl_lines:
                    hits.append(SearchHit(unit.path, i, line.strip()))
        return hits
