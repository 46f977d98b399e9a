"""Documentation bundle ingestion and the six docs tools.

The bundle is a JSON file describing packages, classes, and methods of
the library under test. Once loaded, the index is immutable and all
lookups are pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EngineError

MAX_SUGGESTIONS = 5


@dataclass(frozen=True)
class MethodDoc:
    signature: str
    doc: str = ""
    params: tuple[tuple[str, str], ...] = ()  # (name, description)
    returns: str = ""
    throws: tuple[tuple[str, str], ...] = ()  # (exception, condition)


@dataclass(frozen=True)
class ClassDoc:
    name: str
    doc: str = ""
    methods: tuple[MethodDoc, ...] = ()


@dataclass(frozen=True)
class PackageDoc:
    name: str
    doc: str = ""
    classes: tuple[ClassDoc, ...] = ()


@dataclass
class DocsBundle:
    packages: tuple[PackageDoc, ...] = field(default_factory=tuple)


def _parse_method(raw: dict, where: str) -> MethodDoc:
    if not raw.get("signature"):
        raise EngineError("PARSE", f"{where}: method missing signature")
    throws = []
    for entry in raw.get("throws", []):
        exc = entry.get("exception", "")
        if not exc:
            raise EngineError("PARSE", f"{where}: throws entry missing exception")
        throws.append((exc, entry.get("condition", "")))
    params = tuple((p.get("name", ""), p.get("doc", "")) for p in raw.get("params", []))
    return MethodDoc(
        signature=raw["signature"],
        doc=raw.get("doc", ""),
        params=params,
        returns=raw.get("returns", ""),
        throws=tuple(throws),
    )


def load_bundle(path: str | Path) -> DocsBundle:
    path = Path(path)
    if not path.is_file():
        raise EngineError("IO", f"docs bundle not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EngineError("PARSE", f"{path}: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("packages", []), list):
        raise EngineError("PARSE", f"{path}: top level must be an object with 'packages'")
    packages = []
    seen_pkgs: set[str] = set()
    for p in raw.get("packages", []):
        pname = p.get("name", "")
        if not pname:
            raise EngineError("PARSE", f"{path}: package missing name")
        if pname in seen_pkgs:
            raise EngineError("PARSE", f"{path}: duplicate package {pname}")
        seen_pkgs.add(pname)
        classes = []
        seen_classes: set[str] = set()
        for c in p.get("classes", []):
            cname = c.get("name", "")
            where = f"{path}: {pname}.{cname or '?'}"
            if not cname:
                raise EngineError("PARSE", f"{path}: class in {pname} missing name")
            if cname in seen_classes:
                raise EngineError("PARSE", f"{path}: duplicate class {pname}.{cname}")
            seen_classes.add(cname)
            methods = []
            seen_sigs: set[str] = set()
            for m in c.get("methods", []):
                method = _parse_method(m, where)
                if method.signature in seen_sigs:
                    raise EngineError(
                        "PARSE", f"{where}: duplicate method {method.signature}"
                    )
                seen_sigs.add(method.signature)
                methods.append(method)
            classes.append(ClassDoc(name=cname, doc=c.get("doc", ""), methods=tuple(methods)))
        packages.append(PackageDoc(name=pname, doc=p.get("doc", ""), classes=tuple(classes)))
    return DocsBundle(packages=tuple(packages))


class DocsIndex:
    """Query surface over a loaded bundle."""

    def __init__(self, bundle: DocsBundle) -> None:
        self.bundle = bundle
        self._packages: dict[str, PackageDoc] = {}
        self._classes: dict[str, list[tuple[str, ClassDoc]]] = {}  # Class -> [(pkg, doc)]
        self._methods: dict[str, list[tuple[str, str, MethodDoc]]] = {}  # Class.sig -> [...]
        for pkg in bundle.packages:
            self._packages[pkg.name] = pkg
            for cls in pkg.classes:
                self._classes.setdefault(cls.name, []).append((pkg.name, cls))
                for m in cls.methods:
                    key = f"{cls.name}.{m.signature}"
                    self._methods.setdefault(key, []).append((pkg.name, cls.name, m))

    @classmethod
    def from_file(cls, path: str | Path) -> "DocsIndex":
        return cls(load_bundle(path))

    # -- statistics -------------------------------------------------------

    def counts(self) -> dict[str, int]:
        n_classes = sum(len(p.classes) for p in self.bundle.packages)
        n_methods = sum(len(c.methods) for p in self.bundle.packages for c in p.classes)
        return {"packages": len(self.bundle.packages), "classes": n_classes, "methods": n_methods}

    # -- lookup helpers ---------------------------------------------------

    def _suggest(self, pool: list[str], query: str) -> list[str]:
        prefix = query.lower()
        hits = sorted(name for name in pool if name.lower().startswith(prefix))
        if not hits:
            # fall back to the shortest token of the query
            token = prefix.split(".")[-1].split("(")[0]
            hits = sorted(name for name in pool if token and token in name.lower())
        return hits[:MAX_SUGGESTIONS]

    def _resolve_class(self, qualifier: str) -> tuple[str, ClassDoc]:
        if "." in qualifier:
            pkg_name, _, cls_name = qualifier.rpartition(".")
            for pkg, cls in self._classes.get(cls_name, []):
                if pkg == pkg_name:
                    return pkg, cls
        candidates = self._classes.get(qualifier, [])
        if len(candidates) == 1:
            return candidates[0]
        if len(candidates) > 1:
            names = sorted(f"{pkg}.{cls.name}" for pkg, cls in candidates)
            raise EngineError("AMBIGUOUS", f"class {qualifier} matches: {', '.join(names)}")
        pool = [f"{pkg}.{cls.name}" for lst in self._classes.values() for pkg, cls in lst]
        pool += list(self._classes)
        suggestions = self._suggest(pool, qualifier)
        hint = f"; did you mean: {', '.join(suggestions)}" if suggestions else ""
        raise EngineError("NOT_FOUND", f"unknown class: {qualifier}{hint}")

    def _resolve_method(self, qualifier: str) -> tuple[str, str, MethodDoc]:
        # Accept Class.method(Types) or package.Class.method(Types).
        candidates = list(self._methods.get(qualifier, []))
        if not candidates:
            for key, hits in self._methods.items():
                if qualifier.endswith("." + key):
                    pkg_prefix = qualifier[: -(len(key) + 1)]
                    candidates.extend(h for h in hits if h[0] == pkg_prefix)
        if len(candidates) == 1:
            return candidates[0]
        if len(candidates) > 1:
            names = sorted(f"{pkg}.{cls}.{m.signature}" for pkg, cls, m in candidates)
            raise EngineError("AMBIGUOUS", f"method {qualifier} matches: {', '.join(names)}")
        suggestions = self._suggest(list(self._methods), qualifier)
        hint = f"; did you mean: {', '.join(suggestions)}" if suggestions else ""
        raise EngineError("NOT_FOUND", f"unknown method: {qualifier}{hint}")

    # -- tools ------------------------------------------------------------

    def query_doc(self, kind: str, qualifier: str) -> str:
        if kind == "method":
            pkg, cls, m = self._resolve_method(qualifier)
            lines = [f"{pkg}.{cls}.{m.signature}"]
            if m.doc:
                lines += ["", m.doc]
            if m.params:
                lines += ["", "Parameters:"]
                lines += [f"  {name}: {doc}" for name, doc in m.params]
            if m.returns:
                lines += ["", f"Returns: {m.returns}"]
            if m.throws:
                lines += ["", "Throws:"]
                lines += [f"  {exc}: {cond}" for exc, cond in m.throws]
            return "\n".join(lines)
        if kind == "class":
            pkg, cls = self._resolve_class(qualifier)
            lines = [f"{pkg}.{cls.name}"]
            if cls.doc:
                lines += ["", cls.doc]
            if cls.methods:
                lines += ["", "Methods:"]
                lines += [f"  {m.signature}" for m in cls.methods]
            return "\n".join(lines)
        if kind == "package":
            pkg = self._packages.get(qualifier)
            if pkg is None:
                suggestions = self._suggest(list(self._packages), qualifier)
                hint = f"; did you mean: {', '.join(suggestions)}" if suggestions else ""
                raise EngineError("NOT_FOUND", f"unknown package: {qualifier}{hint}")
            lines = [pkg.name]
            if pkg.doc:
                lines += ["", pkg.doc]
            if pkg.classes:
                lines += ["", "Classes:"]
                lines += [f"  {c.name}" for c in pkg.classes]
            return "\n".join(lines)
        raise EngineError("BAD_ARGS", f"unknown doc kind: {kind}")

    def list_entities(self, kind: str, parent: str | None = None) -> list[str]:
        if kind == "packages":
            return sorted(self._packages)
        if kind == "classes":
            if parent is None:
                raise EngineError("BAD_ARGS", "listing classes requires a package name")
            pkg = self._packages.get(parent)
            if pkg is None:
                raise EngineError("NOT_FOUND", f"unknown package: {parent}")
            return sorted(c.name for c in pkg.classes)
        if kind == "methods":
            if parent is None:
                raise EngineError("BAD_ARGS", "listing methods requires a class name")
            _, cls = self._resolve_class(parent)
            return sorted(m.signature for m in cls.methods)
        raise EngineError("BAD_ARGS", f"unknown listing kind: {kind}")
