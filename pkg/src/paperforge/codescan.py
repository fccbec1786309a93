"""Static extraction of functions, classes, and imports from Python sources.

Used three ways: mining exemplar repositories for the blueprint, checking
generated files against their interface contracts, and building unit
inventories for completeness scoring. Unparseable files are reported, never
fatal.
"""

from __future__ import annotations

import ast
import sys
from dataclasses import dataclass, field
from pathlib import Path

_CONTROL_NODES = {
    ast.If: "if",
    ast.For: "for",
    ast.AsyncFor: "for",
    ast.While: "while",
    ast.Try: "try",
    ast.With: "with",
    ast.AsyncWith: "with",
    ast.Return: "return",
    ast.Raise: "raise",
    ast.Yield: "yield",
    ast.YieldFrom: "yield",
}


@dataclass(frozen=True)
class Param:
    name: str
    annotation: str | None = None
    default: str | None = None


@dataclass(frozen=True)
class FunctionInfo:
    name: str
    params: tuple[Param, ...]
    returns: str | None
    flow: tuple[str, ...]
    effective_lines: int
    lineno: int
    source: str


@dataclass(frozen=True)
class MethodInfo:
    name: str
    effective_lines: int
    lineno: int
    source: str


@dataclass(frozen=True)
class ClassInfo:
    name: str
    attributes: tuple[str, ...]
    methods: tuple[MethodInfo, ...]
    lineno: int


@dataclass(frozen=True)
class ImportRef:
    module: str
    names: tuple[str, ...] = ()
    level: int = 0  # relative-import depth


@dataclass
class ModuleScan:
    path: str
    functions: list[FunctionInfo] = field(default_factory=list)
    classes: list[ClassInfo] = field(default_factory=list)
    imports: list[ImportRef] = field(default_factory=list)
    line_count: int = 0
    parse_error: str | None = None

    @property
    def parsed(self) -> bool:
        return self.parse_error is None

    def exported_names(self) -> set[str]:
        """Public top-level definitions (underscore names are module-private)."""
        names = {f.name for f in self.functions} | {c.name for c in self.classes}
        return {n for n in names if not n.startswith("_")}


def effective_line_count(source: str) -> int:
    """Lines that are neither blank nor pure comments."""
    count = 0
    for line in source.splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            count += 1
    return count


def _segment(lines: list[str], node: ast.AST) -> str:
    return "\n".join(lines[node.lineno - 1 : node.end_lineno])


def _flow_summary(node: ast.FunctionDef | ast.AsyncFunctionDef) -> tuple[str, ...]:
    flow: list[str] = []
    for child in ast.walk(node):
        kind = _CONTROL_NODES.get(type(child))
        if kind and child is not node:
            flow.append(kind)
        if len(flow) >= 12:
            break
    return tuple(flow)


def _params(args: ast.arguments) -> tuple[Param, ...]:
    out: list[Param] = []
    positional = args.posonlyargs + args.args
    defaults: list[ast.expr | None] = [None] * (len(positional) - len(args.defaults)) + list(args.defaults)
    for arg, default in zip(positional, defaults):
        out.append(
            Param(
                arg.arg,
                ast.unparse(arg.annotation) if arg.annotation else None,
                ast.unparse(default) if default is not None else None,
            )
        )
    if args.vararg:
        out.append(Param("*" + args.vararg.arg))
    for arg, default in zip(args.kwonlyargs, args.kw_defaults):
        out.append(
            Param(
                arg.arg,
                ast.unparse(arg.annotation) if arg.annotation else None,
                ast.unparse(default) if default is not None else None,
            )
        )
    if args.kwarg:
        out.append(Param("**" + args.kwarg.arg))
    return tuple(out)


def _class_attributes(node: ast.ClassDef) -> tuple[str, ...]:
    """Class-level assignments plus self.<name> targets in __init__."""
    attrs: list[str] = []
    for stmt in node.body:
        if isinstance(stmt, ast.Assign):
            for target in stmt.targets:
                if isinstance(target, ast.Name):
                    attrs.append(target.id)
        elif isinstance(stmt, ast.AnnAssign) and isinstance(stmt.target, ast.Name):
            attrs.append(stmt.target.id)
    for stmt in node.body:
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)) and stmt.name == "__init__":
            for child in ast.walk(stmt):
                if (
                    isinstance(child, ast.Attribute)
                    and isinstance(child.ctx, ast.Store)
                    and isinstance(child.value, ast.Name)
                    and child.value.id == "self"
                ):
                    attrs.append(child.attr)
    seen: dict[str, None] = {}
    for name in attrs:
        seen.setdefault(name)
    return tuple(seen)


def scan_python_source(source: str, path: str = "<memory>") -> ModuleScan:
    scan = ModuleScan(path=path, line_count=len(source.splitlines()))
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        scan.parse_error = f"{exc.msg} (line {exc.lineno})"
        return scan
    lines = source.splitlines()

    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            segment = _segment(lines, node)
            scan.functions.append(
                FunctionInfo(
                    name=node.name,
                    params=_params(node.args),
                    returns=ast.unparse(node.returns) if node.returns else None,
                    flow=_flow_summary(node),
                    effective_lines=effective_line_count(segment),
                    lineno=node.lineno,
                    source=segment,
                )
            )
        elif isinstance(node, ast.ClassDef):
            methods = []
            for stmt in node.body:
                if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
                    seg = _segment(lines, stmt)
                    methods.append(
                        MethodInfo(stmt.name, effective_line_count(seg), stmt.lineno, seg)
                    )
            scan.classes.append(
                ClassInfo(node.name, _class_attributes(node), tuple(methods), node.lineno)
            )

    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            for alias in node.names:
                scan.imports.append(ImportRef(alias.name))
        elif isinstance(node, ast.ImportFrom):
            scan.imports.append(
                ImportRef(node.module or "", tuple(a.name for a in node.names), node.level)
            )
    return scan


def scan_python_file(path: Path) -> ModuleScan:
    try:
        source = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        scan = ModuleScan(path=str(path))
        scan.parse_error = str(exc)
        return scan
    return scan_python_source(source, str(path))


def resolve_import(ref: ImportRef, importer: str, known_files: set[str]) -> str | None:
    """Map an import to a repository file, or None when it is external.

    `importer` and `known_files` are repo-relative POSIX paths. Handles plain
    modules, dotted packages, and relative imports against the importer's
    directory.
    """
    base_dir = "/".join(importer.split("/")[:-1])
    if ref.level > 0:
        parts = base_dir.split("/") if base_dir else []
        if ref.level - 1 <= len(parts):
            parts = parts[: len(parts) - (ref.level - 1)]
            prefix = "/".join(parts)
            candidates = []
            if ref.module:
                mod_path = ref.module.replace(".", "/")
                candidates = [f"{mod_path}.py", f"{mod_path}/__init__.py"]
            else:
                candidates = [f"{name}.py" for name in ref.names]
            for cand in candidates:
                full = f"{prefix}/{cand}" if prefix else cand
                if full in known_files:
                    return full
        return None

    mod_path = ref.module.replace(".", "/")
    candidates = [f"{mod_path}.py", f"{mod_path}/__init__.py"]
    if base_dir:
        candidates = [f"{base_dir}/{c}" for c in candidates] + candidates
    for cand in candidates:
        if cand in known_files:
            return cand
    # `from pkg import member` where member is itself a module
    if ref.names:
        for name in ref.names:
            for cand in (f"{mod_path}/{name}.py", f"{name}.py" if not ref.module else None):
                if cand and cand in known_files:
                    return cand
    return None


def is_stdlib(module: str) -> bool:
    root = module.split(".")[0]
    return root in sys.stdlib_module_names
