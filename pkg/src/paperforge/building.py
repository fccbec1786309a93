"""Iterative feedback-driven implementation: file generation, fidelity validation,
sandboxed execution with two-phase debugging, and hyperparameter-search injection.

Generated code is treated as opaque text plus a pluggable static scanner for
export/import checks, so the orchestrator itself stays neutral about the
generated ecosystem (the default scanner understands Python).
"""

from __future__ import annotations

import difflib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .codescan import is_stdlib, resolve_import, scan_python_source
from .errors import ConfigError, StageError
from .gateway import ChatRequest, LlmGateway, StageBinding, TextPart
from .graphs import DepEdge, DependencyGraph
from .parsing import DistilledPaper, ParsedTable
from .planning import TaskDescription, TaskPlan, category_for_path
from . import prompts
from .sandbox import ExecutionLimits, run_sandboxed, to_execution_error
from .workspace import atomic_write_json, atomic_write_text, sanitize_relpath

log = logging.getLogger(__name__)

DRAFT, VALIDATED, EXECUTABLE = "draft", "validated", "executable"

_TRACEBACK_FILE_RE = re.compile(r'File "([^"]+)", line \d+')
_FENCED_CODE_RE = re.compile(r"```(?:[a-zA-Z0-9_+-]*)\n(.*?)```", re.DOTALL)


@dataclass
class CodeFile:
    path: str
    content: str
    generation_index: int
    revision: int = 1


@dataclass
class RepoState:
    files: dict[str, CodeFile] = field(default_factory=dict)
    status: str = DRAFT
    diagrams: list[str] = field(default_factory=list)

    def modules(self) -> dict[str, list[str]]:
        grouped: dict[str, list[str]] = {}
        for path in sorted(self.files):
            top = path.split("/")[0] if "/" in path else "(root)"
            grouped.setdefault(top, []).append(path)
        return grouped


@dataclass(frozen=True)
class AspectFinding:
    aspect: str
    status: str  # pass | fail | not_applicable
    anchor: str
    explanation: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[AspectFinding, ...]

    ASPECTS = ("architecture", "loss", "optimization")

    @property
    def passed(self) -> bool:
        return all(f.status != "fail" for f in self.findings)

    def failures(self) -> list[AspectFinding]:
        return [f for f in self.findings if f.status == "fail"]


@dataclass(frozen=True)
class Localization:
    findings: tuple[tuple[str, str, str], ...]  # (file, component, excerpt)

    @property
    def files(self) -> list[str]:
        return list(dict.fromkeys(f for f, _c, _e in self.findings))


@dataclass(frozen=True)
class HpoParameter:
    name: str
    kind: str  # choice | range | fixed
    values: tuple[Any, ...] = ()
    low: float = 0.0
    high: float = 0.0
    source: str = ""


@dataclass(frozen=True)
class HpoConfig:
    parameters: tuple[HpoParameter, ...]
    objective: str
    budget: int


@dataclass
class DebugIteration:
    index: int
    error_kind: str | None
    localized_files: list[str]
    changed_files: list[str]
    succeeded: bool


@dataclass
class DebugReport:
    iterations: list[DebugIteration]
    succeeded: bool

    @property
    def execute_count(self) -> int:
        return len(self.iterations)


# -- static scanners -----------------------------------------------------------

class PythonScanner:
    """Export/import checks for generated Python files."""

    language = "python"

    def check(
        self,
        path: str,
        content: str,
        contract: tuple[str, ...],
        available_files: set[str],
        declared_external: set[str],
    ) -> list[str]:
        scan = scan_python_source(content, path)
        if not scan.parsed:
            return [f"{path}: not parseable: {scan.parse_error}"]
        problems = []
        exported = scan.exported_names()
        for unit in contract:
            if unit not in exported:
                problems.append(f"{path}: missing exported unit {unit!r} required by its interface contract")
        for ref in scan.imports:
            target = resolve_import(ref, path, available_files | {path})
            if target == path:
                continue
            if target is not None:
                if target not in available_files:
                    problems.append(f"{path}: imports {target!r} which is not generated yet")
                continue
            root = (ref.module or (ref.names[0] if ref.names else "")).split(".")[0]
            if not root or is_stdlib(root) or root in declared_external:
                continue
            problems.append(
                f"{path}: imports undeclared external library {root!r}"
            )
        return problems


class NullScanner:
    """No-op scanner for ecosystems without a registered analyzer."""

    language = "opaque"

    def check(self, path, content, contract, available_files, declared_external) -> list[str]:
        return []


def get_scanner(language: str):
    if language == "python":
        return PythonScanner()
    log.warning("no static scanner for language %r; export/import checks disabled", language)
    return NullScanner()


def strip_code_fences(text: str) -> str:
    blocks = _FENCED_CODE_RE.findall(text)
    if blocks:
        return max(blocks, key=len)
    return text


# -- file generation ---------------------------------------------------------------

def _render_prior(files: dict[str, CodeFile], limit_chars: int = 40000) -> str:
    chunks = []
    for path in sorted(files, key=lambda p: files[p].generation_index):
        chunks.append(f"--- {path} ---\n{files[path].content}")
    text = "\n".join(chunks) or "(none yet)"
    return text[-limit_chars:]


def _declared_external(plan: TaskPlan) -> set[str]:
    out: set[str] = set()
    for libs in plan.graph.external.values():
        out.update(lib.split(".")[0] for lib in libs)
    return out


def implement_file(
    task: TaskDescription,
    plan: TaskPlan,
    prior: dict[str, CodeFile],
    distilled: DistilledPaper,
    gateway: LlmGateway,
    binding: StageBinding,
    scanner,
    *,
    generation_index: int,
    max_repairs: int = 2,
) -> CodeFile:
    """Generate one file from its task, prior code, and the distilled paper."""
    for dep_file, _unit in task.consumes:
        if dep_file not in prior:
            raise StageError("implement", f"{task.path}: dependency {dep_file!r} not generated yet")

    steps = "\n".join(
        f"{i + 1}. {s.text} [{', '.join(s.anchors)}]" for i, s in enumerate(task.steps)
    )
    distilled_text = "\n".join(f"[{s.id}] {s.text}" for s in distilled.sections)
    request = ChatRequest(
        system_prompt=prompts.IMPLEMENT_SYSTEM,
        user_parts=(TextPart(prompts.IMPLEMENT_USER.format(
            path=task.path, task=steps, contract=", ".join(task.exports) or "(none)",
            prior=_render_prior(prior), distilled=distilled_text)),),
    )
    available = set(prior)
    declared = _declared_external(plan)
    for attempt in range(max_repairs + 1):
        response = gateway.complete(request, binding)
        content = strip_code_fences(response.text).strip() + "\n"
        problems = scanner.check(task.path, content, task.exports, available, declared)
        if not problems:
            return CodeFile(path=task.path, content=content, generation_index=generation_index)
        log.warning("generated %s violates its contract (attempt %d): %s",
                    task.path, attempt + 1, problems)
        request = request.with_extra_text(
            "Your previous file was rejected:\n- " + "\n- ".join(problems) +
            "\nReturn the corrected complete file content."
        )
    raise StageError("implement", f"{task.path}: contract violations persist after {max_repairs} repair(s)")


def implement_whole_repo(
    distilled: DistilledPaper,
    blueprint_text: str,
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int = 2,
) -> tuple[dict[str, CodeFile], str]:
    """Decomposition-ablated substitute: one prompt emits every file plus the entry."""

    def validate(value: Any) -> list[str]:
        problems = []
        paths = [f["path"] for f in value["files"]]
        if not paths:
            problems.append("repository needs at least one file")
        if len(set(paths)) != len(paths):
            problems.append("file paths must be unique")
        if value["entry"] not in paths:
            problems.append("entry must name one of the emitted files")
        return problems

    distilled_text = "\n".join(f"[{s.id}] {s.text}" for s in distilled.sections)
    request = ChatRequest(
        system_prompt=prompts.WHOLE_REPO_SYSTEM,
        user_parts=(TextPart(prompts.WHOLE_REPO_USER.format(
            distilled=distilled_text, blueprint=blueprint_text)),),
        response_schema="repo_files.v1",
    )
    result = gateway.complete_validated(request, binding, validate, max_repairs)
    files = {}
    for i, entry in enumerate(result.value["files"], start=1):
        files[entry["path"]] = CodeFile(path=entry["path"], content=entry["content"],
                                        generation_index=i)
    return files, result.value["entry"]


def graph_from_files(files: dict[str, CodeFile]) -> DependencyGraph:
    """Local import-scan graph for repositories generated without a plan."""
    graph = DependencyGraph()
    for path in sorted(files):
        graph.add_node(path, category_for_path(path))
    known = set(files)
    for path in sorted(files):
        scan = scan_python_source(files[path].content, path)
        if not scan.parsed:
            continue
        for ref in scan.imports:
            target = resolve_import(ref, path, known)
            if target and target != path:
                names = tuple(ref.names) if ref.names else ()
                graph.add_edge(path, target, names)
    deduped: dict[tuple[str, str], tuple[str, ...]] = {}
    for edge in graph.edges:
        key = (edge.src, edge.dst)
        deduped[key] = tuple(dict.fromkeys(deduped.get(key, ()) + edge.components))
    graph.edges = [DepEdge(src, dst, comps) for (src, dst), comps in sorted(deduped.items())]
    return graph


# -- validation -----------------------------------------------------------------

def validate_repo(
    state: RepoState,
    distilled: DistilledPaper,
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int = 2,
) -> ValidationReport:
    known_sections = distilled.section_ids()

    def validate(value: Any) -> list[str]:
        problems = []
        aspects = [a["aspect"] for a in value["aspects"]]
        if sorted(aspects) != sorted(ValidationReport.ASPECTS):
            problems.append("report must cover exactly architecture, loss, and optimization")
        for aspect in value["aspects"]:
            if aspect["status"] == "fail" and aspect.get("anchor") not in known_sections:
                problems.append(
                    f"failing aspect {aspect['aspect']!r} must cite a resolvable paper anchor"
                )
        return problems

    files_text = _render_prior(state.files)
    distilled_text = "\n".join(f"[{s.id}] {s.text}" for s in distilled.sections)
    request = ChatRequest(
        system_prompt=prompts.VALIDATE_SYSTEM,
        user_parts=(TextPart(prompts.VALIDATE_USER.format(
            distilled=distilled_text, files=files_text)),),
        response_schema="validation_report.v1",
    )
    result = gateway.complete_validated(request, binding, validate, max_repairs)
    findings = tuple(
        AspectFinding(a["aspect"], a["status"], a.get("anchor", ""), a["explanation"])
        for a in result.value["aspects"]
    )
    return ValidationReport(findings)


# -- two-phase debugging ------------------------------------------------------------

def localize_error(
    error_text: str,
    state: RepoState,
    plan_files: list[str],
    gateway: LlmGateway,
    binding: StageBinding,
    *,
    entry_path: str,
    max_repairs: int = 2,
) -> Localization:
    known = set(plan_files)

    def validate(value: Any) -> list[str]:
        problems = []
        if not value["findings"]:
            problems.append("localization must name at least one file")
        for finding in value["findings"]:
            if finding["file"] not in known:
                problems.append(f"{finding['file']!r} is not a repository file")
        return problems

    request = ChatRequest(
        system_prompt=prompts.LOCALIZE_SYSTEM,
        user_parts=(TextPart(prompts.LOCALIZE_USER.format(
            error=error_text, files=_render_prior(state.files))),),
        response_schema="error_localization.v1",
    )
    try:
        result = gateway.complete_validated(request, binding, validate, max_repairs)
        findings = tuple(
            (f["file"], f.get("component", ""), f.get("excerpt", ""))
            for f in result.value["findings"]
        )
        return Localization(findings)
    except StageError:
        log.warning("model localization failed; falling back to traceback parsing")
        return _localize_from_traceback(error_text, known, entry_path)


def _localize_from_traceback(error_text: str, known: set[str], entry_path: str) -> Localization:
    basenames = {Path(f).name: f for f in known}
    hits: list[str] = []
    for match in _TRACEBACK_FILE_RE.finditer(error_text):
        name = Path(match.group(1)).name
        if name in basenames:
            hits.append(basenames[name])
    hits = list(dict.fromkeys(reversed(hits)))  # deepest frame (root cause) first
    if not hits:
        hits = [entry_path]
    excerpt = "\n".join(error_text.splitlines()[-10:])
    return Localization(tuple((f, "", excerpt) for f in hits))


def correct_error(
    localization: Localization,
    state: RepoState,
    plan: TaskPlan | None,
    distilled: DistilledPaper,
    gateway: LlmGateway,
    binding: StageBinding,
    scanner,
    max_repairs: int = 2,
) -> list[str]:
    """Apply model corrections restricted to the localized files; returns changed paths."""
    allowed = set(localization.files)

    def validate(value: Any) -> list[str]:
        problems = []
        if not value["revisions"]:
            problems.append("corrections must revise at least one file")
        for revision in value["revisions"]:
            if revision["path"] not in allowed:
                problems.append(
                    f"revision touches {revision['path']!r} which is outside the localized set"
                )
        return problems

    loc_text = "\n".join(f"- {f} :: {c or '(file)'}\n  {e}" for f, c, e in localization.findings)
    allowed_text = "\n".join(
        f"--- {path} ---\n{state.files[path].content}" for path in sorted(allowed) if path in state.files
    )
    distilled_text = "\n".join(f"[{s.id}] {s.text}" for s in distilled.sections)
    request = ChatRequest(
        system_prompt=prompts.CORRECT_SYSTEM,
        user_parts=(TextPart(prompts.CORRECT_USER.format(
            localization=loc_text, files=allowed_text, distilled=distilled_text)),),
        response_schema="corrections.v1",
    )
    result = gateway.complete_validated(request, binding, validate, max_repairs)

    changed: list[str] = []
    available = set(state.files)
    declared = _declared_external(plan) if plan else set()
    for revision in result.value["revisions"]:
        path = revision["path"]
        content = strip_code_fences(revision["content"]).strip() + "\n"
        if path in state.files and state.files[path].content == content:
            continue
        contract = plan.tasks[path].exports if plan and path in plan.tasks else ()
        problems = scanner.check(path, content, contract, available - {path}, declared)
        if problems:
            raise StageError("debug", f"correction for {path} violates its contract: {problems}")
        current = state.files.get(path)
        if current is None:
            raise StageError("debug", f"correction targets unknown file {path!r}")
        state.files[path] = CodeFile(path=path, content=content,
                                     generation_index=current.generation_index,
                                     revision=current.revision + 1)
        changed.append(path)
    return changed


def debug_loop(
    state: RepoState,
    plan: TaskPlan | None,
    distilled: DistilledPaper,
    gateway: LlmGateway,
    localize_binding: StageBinding,
    scanner,
    *,
    repo_dir: Path,
    runs_dir: Path,
    scratch_dir: Path,
    entry_command: str,
    entry_path: str,
    limits: ExecutionLimits,
    max_iterations: int = 10,
    max_repairs: int = 2,
    history: "RevisionHistory | None" = None,
) -> DebugReport:
    """execute -> localize -> correct until clean or the iteration budget runs out."""
    plan_files = plan.files if plan else sorted(state.files)
    report = DebugReport(iterations=[], succeeded=False)

    for index in range(1, max_iterations + 1):
        write_repo(repo_dir, state)
        result = run_sandboxed(repo_dir, entry_command, limits, scratch_root=scratch_dir)
        iter_dir = runs_dir / f"iter_{index}"
        iter_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(iter_dir / "output.txt", result.output)

        if result.ok:
            report.iterations.append(DebugIteration(index, None, [], [], succeeded=True))
            report.succeeded = True
            state.status = EXECUTABLE
            atomic_write_json(iter_dir / "result.json", {"succeeded": True, "exit_status": 0})
            return report

        error = to_execution_error(result)
        atomic_write_json(iter_dir / "error.json", {
            "kind": error.kind, "excerpt": error.excerpt, "exit_status": error.exit_status,
        })
        if index == max_iterations:
            # budget spent on this failing execution; no further correction round
            report.iterations.append(DebugIteration(index, error.kind, [], [], succeeded=False))
            break

        localization = localize_error(
            error.raw_output, state, plan_files, gateway, localize_binding,
            entry_path=entry_path, max_repairs=max_repairs,
        )
        atomic_write_json(iter_dir / "localization.json", {
            "findings": [{"file": f, "component": c, "excerpt": e}
                         for f, c, e in localization.findings]
        })

        before = {path: file.content for path, file in state.files.items()}
        changed = correct_error(localization, state, plan, distilled, gateway,
                                localize_binding, scanner, max_repairs)
        _audit_scope(iter_dir, before, state, changed, localization, history, index)
        report.iterations.append(
            DebugIteration(index, error.kind, localization.files, changed, succeeded=False)
        )

    state.status = DRAFT
    return report


def _audit_scope(
    iter_dir: Path,
    before: dict[str, str],
    state: RepoState,
    changed: list[str],
    localization: Localization,
    history: "RevisionHistory | None",
    iteration: int,
) -> None:
    out_of_scope = [p for p in changed if p not in set(localization.files)]
    if out_of_scope:  # correct_error already rejects these; belt and braces
        raise StageError("debug", f"scope violation: {out_of_scope} changed outside localization")
    diff_dir = iter_dir / "diffs"
    for path in changed:
        diff = "".join(difflib.unified_diff(
            before[path].splitlines(keepends=True),
            state.files[path].content.splitlines(keepends=True),
            fromfile=f"a/{path}", tofile=f"b/{path}",
        ))
        diff_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(diff_dir / f"{sanitize_relpath(path)}.diff", diff)
        if history:
            history.record(state.files[path], reason=f"debug iter {iteration}")
    atomic_write_json(iter_dir / "audit.json", {
        "localized": localization.files,
        "changed": changed,
        "within_scope": not out_of_scope,
    })


# -- revision history ------------------------------------------------------------

class RevisionHistory:
    """Full content per revision; replaying the log reproduces the final repo."""

    def __init__(self, root: Path):
        self.root = root
        self.log_path = root / "log.jsonl"

    def record(self, file: CodeFile, reason: str) -> None:
        dest = self.root / sanitize_relpath(file.path)
        dest.mkdir(parents=True, exist_ok=True)
        atomic_write_text(dest / f"r{file.revision}.txt", file.content)
        self.root.mkdir(parents=True, exist_ok=True)
        with self.log_path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps({
                "path": file.path, "revision": file.revision, "reason": reason,
            }, sort_keys=True) + "\n")

    def replay(self) -> dict[str, str]:
        """Content of the highest recorded revision per file."""
        latest: dict[str, int] = {}
        if not self.log_path.exists():
            return {}
        for line in self.log_path.read_text(encoding="utf-8").splitlines():
            entry = json.loads(line)
            latest[entry["path"]] = max(latest.get(entry["path"], 0), entry["revision"])
        return {
            path: (self.root / sanitize_relpath(path) / f"r{revision}.txt").read_text(encoding="utf-8")
            for path, revision in latest.items()
        }


# -- repo materialization -----------------------------------------------------------

def _safe_relpath(path: str) -> str:
    rel = path.replace("\\", "/").lstrip("/")
    if ".." in Path(rel).parts:
        raise ConfigError(f"unsafe generated path: {path!r}")
    return rel


def write_repo(repo_dir: Path, state: RepoState) -> None:
    repo_dir.mkdir(parents=True, exist_ok=True)
    for path, file in state.files.items():
        dest = repo_dir / _safe_relpath(path)
        dest.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(dest, file.content)
    atomic_write_json(repo_dir / ".repo_meta.json", {
        "status": state.status,
        "files": [
            {"path": f.path, "generation_index": f.generation_index, "revision": f.revision}
            for f in sorted(state.files.values(), key=lambda f: f.path)
        ],
        "diagrams": state.diagrams,
    })


def load_repo(repo_dir: Path) -> RepoState:
    meta = json.loads((repo_dir / ".repo_meta.json").read_text(encoding="utf-8"))
    state = RepoState(status=meta["status"], diagrams=list(meta.get("diagrams", [])))
    for entry in meta["files"]:
        content = (repo_dir / _safe_relpath(entry["path"])).read_text(encoding="utf-8")
        state.files[entry["path"]] = CodeFile(
            path=entry["path"], content=content,
            generation_index=entry["generation_index"], revision=entry["revision"],
        )
    return state


# -- hyperparameter search injection ---------------------------------------------------

_RANGE_RE = re.compile(r"^\s*(-?\d+(?:\.\d+)?(?:e-?\d+)?)\s*(?:-|\.\.|to)\s*(-?\d+(?:\.\d+)?(?:e-?\d+)?)\s*$")


def _parse_value_cell(cell: str) -> list[Any]:
    cell = cell.strip().strip("{}")
    parts = [p.strip() for p in re.split(r"[,/;]", cell) if p.strip()]
    values: list[Any] = []
    for part in parts:
        try:
            number = float(part)
            values.append(int(number) if number.is_integer() and "." not in part and "e" not in part.lower() else number)
        except ValueError:
            values.append(part)
    return values


def extract_hpo_config(
    tables: dict[str, ParsedTable],
    *,
    objective: str = "accuracy",
    budget: int = 10,
) -> HpoConfig:
    """Search spaces from table records tagged as hyperparameters; each traces to its cell."""
    collected: dict[str, tuple[list[Any], str]] = {}
    for table in tables.values():
        for record in table.records:
            if record.kind != "hyperparameter":
                continue
            source = f"{table.source_id}:r{record.row}c{record.col}"
            range_match = _RANGE_RE.match(record.value)
            if range_match:
                low, high = float(range_match.group(1)), float(range_match.group(2))
                collected.setdefault(record.key, ([], source))[0].append(("__range__", low, high))
                continue
            values, existing = collected.setdefault(record.key, ([], source))
            for value in _parse_value_cell(record.value):
                if value not in values:
                    values.append(value)

    parameters: list[HpoParameter] = []
    for name in sorted(collected):
        values, source = collected[name]
        ranges = [v for v in values if isinstance(v, tuple) and v[0] == "__range__"]
        plain = [v for v in values if not (isinstance(v, tuple) and v and v[0] == "__range__")]
        if ranges:
            low, high = ranges[0][1], ranges[0][2]
            if low > high:
                log.warning("hyperparameter %s: inverted range [%s, %s]; swapping", name, low, high)
                low, high = high, low
            if low == high:
                log.warning("hyperparameter %s: degenerate range; collapsing to fixed %s", name, low)
                parameters.append(HpoParameter(name, "fixed", values=(low,), source=source))
            else:
                parameters.append(HpoParameter(name, "range", low=low, high=high, source=source))
        elif len(plain) > 1:
            parameters.append(HpoParameter(name, "choice", values=tuple(plain), source=source))
        elif plain:
            parameters.append(HpoParameter(name, "fixed", values=(plain[0],), source=source))
    return HpoConfig(tuple(parameters), objective=objective, budget=budget)


_WRAPPER_TEMPLATE = '''"""Entry point wrapped with hyperparameter search.

The original single-run behavior is preserved: set SINGLE_RUN=1 in the
environment (or pass --single-run) to run the entry exactly as generated.
Search-space provenance: {provenance}
"""
import os
import sys

SEARCH_SPACE = {space}
TRIAL_BUDGET = {budget}
OBJECTIVE = {objective!r}

_ORIGINAL_SOURCE = {original!r}


def run_single():
    exec(compile(_ORIGINAL_SOURCE, {path!r}, "exec"), {{"__name__": "__main__"}})


def run_search():
    from ray import tune

    space = {{}}
    for name, spec in SEARCH_SPACE.items():
        if spec["kind"] == "choice":
            space[name] = tune.choice(list(spec["values"]))
        elif spec["kind"] == "range":
            space[name] = tune.uniform(spec["low"], spec["high"])
        else:
            space[name] = spec["values"][0]

    def trial(config):
        for key, value in config.items():
            os.environ["HP_" + key.upper()] = str(value)
        run_single()

    tune.run(trial, config=space, num_samples=TRIAL_BUDGET, metric=OBJECTIVE, mode="max")


if __name__ == "__main__":
    if os.environ.get("SINGLE_RUN") == "1" or "--single-run" in sys.argv:
        run_single()
    else:
        run_search()
'''


def inject_hpo(entry_file: CodeFile, hpo: HpoConfig) -> tuple[CodeFile, str]:
    """Wrap the entry file for search-tool exploration; no-op when nothing was extracted."""
    if not hpo.parameters:
        return entry_file, "no hyperparameters extracted; entry file unchanged"
    space: dict[str, dict[str, Any]] = {}
    provenance = []
    for param in hpo.parameters:
        if param.kind == "range":
            space[param.name] = {"kind": "range", "low": param.low, "high": param.high}
        else:
            space[param.name] = {"kind": param.kind, "values": list(param.values)}
        provenance.append(f"{param.name} <- {param.source}")
    wrapped = _WRAPPER_TEMPLATE.format(
        provenance="; ".join(provenance),
        space=repr(space),
        budget=hpo.budget,
        objective=hpo.objective,
        original=entry_file.content,
        path=entry_file.path,
    )
    revised = CodeFile(
        path=entry_file.path,
        content=wrapped,
        generation_index=entry_file.generation_index,
        revision=entry_file.revision + 1,
    )
    return revised, f"injected search over {len(hpo.parameters)} parameter(s), budget {hpo.budget}"
