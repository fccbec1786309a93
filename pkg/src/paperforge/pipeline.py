"""End-to-end run orchestration: stage sequencing, ablation switches, resume.

Stage order is blueprint -> parsing -> decomposition -> implementation. Each
stage persists its artifacts and registers them in the manifest before the next
stage starts, so a killed run restarts at the first incomplete stage with
earlier artifacts untouched (verified by hash).
"""

from __future__ import annotations

import logging
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import building, parsing
from .blueprint import Blueprint, load_blueprint
from .building import (
    DebugReport,
    RepoState,
    RevisionHistory,
    debug_loop,
    get_scanner,
    implement_file,
    implement_whole_repo,
    inject_hpo,
    localize_error,
    correct_error,
    validate_repo,
    write_repo,
)
from .config import RunConfig
from .errors import ConfigError, PaperforgeError, StageError
from .gateway import LlmGateway, TokenUsage, make_backend
from .graphs import graph_to_payload, to_dot
from .ingest import ingest, load_raw
from .manifest import RUN_STAGES, RunManifest, check_integrity, register_tree
from .parsing import (
    DistilledPaper,
    check_anchors,
    distill,
    distill_text_only,
    integrate,
    load_distilled,
    parse_equation,
    parse_image,
    parse_table,
    persist_distilled,
    persist_parsed,
    restore_structure,
)
from .planning import build_plan, load_plan, persist_plan
from .sandbox import ExecutionLimits, run_sandboxed
from .workspace import Workspace, WorkspaceLock, atomic_write_json, atomic_write_text

log = logging.getLogger(__name__)

# trees each stage owns; wiped before the stage re-runs on resume
STAGE_TREES: dict[str, tuple[str, ...]] = {
    "blueprint": ("blueprint.md", "blueprint.meta"),
    "parsing": ("raw", "parsed", "distilled.json", "distilled.md"),
    "decomposition": ("plan",),
    "implementation": ("repo", "runs", "report.md"),
}


@dataclass
class RunContext:
    config: RunConfig
    workspace: Workspace
    gateway: LlmGateway
    manifest: RunManifest
    blueprint: Blueprint | None = None
    raw: Any = None
    distilled: DistilledPaper | None = None
    plan: Any = None
    repo: RepoState | None = None
    debug_report: DebugReport | None = None


def build_gateway(config: RunConfig, workspace: Workspace) -> LlmGateway:
    return LlmGateway(
        make_backend(config.backend),
        workspace.cache_dir,
        workspace.call_log_path,
        retries=config.retries,
        backoff=config.backoff,
    )


def run_pipeline(config: RunConfig, *, resume: bool = False) -> RunManifest:
    if config.workspace is None:
        raise ConfigError("a workspace path is required")
    workspace = Workspace(config.workspace).ensure()
    with WorkspaceLock(workspace.root):
        gateway = build_gateway(config, workspace)
        if resume:
            manifest = _prepare_resume(workspace)
        else:
            if workspace.manifest_path.exists():
                raise ConfigError(
                    f"workspace already contains a run: {workspace.manifest_path} (use resume)"
                )
            manifest = RunManifest.create(workspace.manifest_path, config.snapshot())
        context = RunContext(config, workspace, gateway, manifest)

        stage_functions: dict[str, Callable[[RunContext], str]] = {
            "blueprint": _stage_blueprint,
            "parsing": _stage_parsing,
            "decomposition": _stage_decomposition,
            "implementation": _stage_implementation,
        }
        completed = {s for s, st in manifest.stage_status().items() if st == "completed"}
        for stage in RUN_STAGES:
            if stage in completed:
                _reload_stage_outputs(stage, context)
                continue
            manifest.stage_started(stage)
            before = gateway.meter.total()
            started = time.monotonic()
            try:
                note = stage_functions[stage](context)
            except PaperforgeError as exc:
                manifest.stage_failed(stage, str(exc))
                raise
            delta = _usage_delta(before, gateway.meter.total())
            wall = time.monotonic() - started
            manifest.stage_completed(stage, delta, wall, note)
            log.info("stage %s completed in %.1fs (%s)", stage, wall, note)

        final = context.repo.status if context.repo else "draft"
        manifest.run_completed(final, gateway.meter.total())
        return manifest


def _usage_delta(before: TokenUsage, after: TokenUsage) -> TokenUsage:
    return TokenUsage(after.input_tokens - before.input_tokens,
                      after.output_tokens - before.output_tokens)


def _prepare_resume(workspace: Workspace) -> RunManifest:
    if not workspace.manifest_path.exists():
        raise ConfigError(f"nothing to resume: no manifest in {workspace.root}")
    manifest = RunManifest.load(workspace.manifest_path)
    first = manifest.first_incomplete_stage()
    if first is None:
        raise ConfigError("run already completed; nothing to resume")
    # wipe partial output of every stage that is not completed, then verify the rest
    status = manifest.stage_status()
    for stage in RUN_STAGES:
        if status[stage] == "completed":
            continue
        for tree in STAGE_TREES[stage]:
            target = workspace.root / tree
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
    check_integrity(manifest, workspace)
    manifest.append({"event": "resumed", "stage": first})
    return manifest


def _reload_stage_outputs(stage: str, context: RunContext) -> None:
    workspace = context.workspace
    if stage == "blueprint":
        meta = workspace.root / "blueprint.meta"
        context.blueprint = load_blueprint(meta) if meta.exists() else Blueprint.empty()
    elif stage == "parsing":
        context.raw = load_raw(workspace.raw_dir)
        context.distilled = load_distilled(workspace.root)
    elif stage == "decomposition":
        if (workspace.plan_dir / "architecture.json").exists():
            context.plan = load_plan(workspace.plan_dir)


# -- stages ---------------------------------------------------------------------


def _stage_blueprint(context: RunContext) -> str:
    config, workspace = context.config, context.workspace
    if not config.ablation["blueprint"]:
        context.blueprint = Blueprint.empty()
        atomic_write_text(workspace.root / "blueprint.md", context.blueprint.render_markdown())
        atomic_write_json(workspace.root / "blueprint.meta", {
            "provenance": [], "corpus_size": 0, "sections": context.blueprint.sections,
            "folder_frequencies": [],
        })
        _register(context, "blueprint", ("blueprint.md", "blueprint.meta"))
        return "ablated: empty template substituted"
    if config.blueprint_meta is None or not Path(config.blueprint_meta).exists():
        raise ConfigError("blueprint metadata missing; build one with the blueprint command or ablate it")
    blueprint = load_blueprint(Path(config.blueprint_meta))
    context.blueprint = blueprint
    atomic_write_text(workspace.root / "blueprint.md", blueprint.render_markdown())
    shutil.copyfile(Path(config.blueprint_meta), workspace.root / "blueprint.meta")
    _register(context, "blueprint", ("blueprint.md", "blueprint.meta"))
    return f"template from {blueprint.corpus_size} exemplar(s)"


def _stage_parsing(context: RunContext) -> str:
    config, workspace, gateway = context.config, context.workspace, context.gateway
    if config.paper is None:
        raise ConfigError("a paper input path is required")
    raw = ingest(config.paper, config.ocr_command, workspace.raw_dir)
    context.raw = raw
    repairs = config.budgets.max_repairs

    if not config.ablation["multimodal"]:
        distilled = distill_text_only(raw)
        persist_distilled(workspace.root, distilled)
        context.distilled = distilled
        _register(context, "parsing", ("raw", "distilled.json", "distilled.md"))
        return "ablated: text channel only, no parsing model calls"

    binding = config.binding("parsing")
    structured = restore_structure(raw, gateway, binding, repairs)
    images = {b.id: parse_image(b, raw, gateway, binding) for b in raw.images}
    equations = {b.id: parse_equation(b, raw, gateway, binding, repairs) for b in raw.equations}
    tables = {b.id: parse_table(b, gateway, binding, repairs) for b in raw.tables}

    # parse never drops an element; verify the channels survived intact
    if (len(images), len(equations), len(tables)) != (len(raw.images), len(raw.equations), len(raw.tables)):
        raise StageError("parsing", "element channel count mismatch after parsing")

    sections = parsing.build_sections(structured, images, equations, tables, raw)
    integrated = integrate(sections, gateway, binding, repairs)
    distilled = distill(integrated, gateway, binding, repairs)
    problems = check_anchors(distilled, raw)
    if problems:
        raise StageError("parsing", f"distilled anchors do not dereference: {problems}")

    persist_parsed(workspace.parsed_dir, structured, images, equations, tables, integrated)
    persist_distilled(workspace.root, distilled)
    context.distilled = distilled
    _register(context, "parsing", ("raw", "parsed", "distilled.json", "distilled.md"))
    return (f"{len(raw.text_blocks)} text blocks, {len(images)} image(s), "
            f"{len(equations)} equation(s), {len(tables)} table(s)")


def _stage_decomposition(context: RunContext) -> str:
    config, workspace, gateway = context.config, context.workspace, context.gateway
    if not config.ablation["decomposition"]:
        return "ablated: single-pass whole-repo generation deferred to implementation"
    assert context.distilled is not None and context.blueprint is not None
    plan = build_plan(
        context.distilled, context.blueprint, gateway, config.binding("decomposition"),
        plan_cap=config.budgets.plan_cap, max_repairs=config.budgets.max_repairs,
    )
    context.plan = plan
    persist_plan(workspace.plan_dir, plan)
    _register(context, "decomposition", ("plan",))
    removed = f", {len(plan.removed_edges)} cycle edge(s) removed" if plan.removed_edges else ""
    return f"{len(plan.files)} file(s) planned{removed}"


def _stage_implementation(context: RunContext) -> str:
    config, workspace, gateway = context.config, context.workspace, context.gateway
    assert context.distilled is not None
    scanner = get_scanner(config.generated_language)
    repairs = config.budgets.max_repairs
    history = RevisionHistory(workspace.runs_dir / "history")
    state = RepoState()

    if config.ablation["decomposition"]:
        assert context.plan is not None
        plan = context.plan
        order = plan.implementation_order()
        for index, path in enumerate(order, start=1):
            file = implement_file(
                plan.tasks[path], plan, state.files, context.distilled, gateway,
                config.binding("implement"), scanner,
                generation_index=index, max_repairs=repairs,
            )
            state.files[path] = file
            history.record(file, reason="generated")
        diagram_rel = "plan/graph.dot"
    else:
        files, _entry = implement_whole_repo(
            context.distilled,
            (context.blueprint or Blueprint.empty()).render_markdown(),
            gateway, config.binding("implement"), repairs,
        )
        plan = None
        state.files = files
        for file in files.values():
            history.record(file, reason="generated")
        graph = building.graph_from_files(files)
        workspace.plan_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_json(workspace.plan_dir / "graph.json", graph_to_payload(graph))
        atomic_write_text(workspace.plan_dir / "graph.dot", to_dot(graph))
        _register(context, "implementation", ("plan",))
        diagram_rel = "plan/graph.dot"

    state.diagrams = [diagram_rel]
    context.plan = plan
    context.repo = state
    write_repo(workspace.repo_dir, state)

    notes = [f"{len(state.files)} file(s) generated"]
    if not config.ablation["feedback"]:
        state.status = building.DRAFT
        write_repo(workspace.repo_dir, state)
        _write_report(context, notes + ["feedback ablated: no validation/execution/debugging"])
        _register(context, "implementation", ("repo", "runs", "report.md"))
        return "; ".join(notes) + "; feedback ablated"

    # fidelity validation before the first execution; failures feed correction
    binding_validate = config.binding("validate")
    binding_debug = config.binding("debug")
    report_pre = validate_repo(state, context.distilled, gateway, binding_validate, repairs)
    atomic_write_json(workspace.runs_dir / "validation_pre.json", _validation_payload(report_pre))
    if report_pre.passed:
        state.status = building.VALIDATED
    else:
        failures = "\n".join(
            f"{f.aspect} check failed (anchor {f.anchor}): {f.explanation}"
            for f in report_pre.failures()
        )
        localization = localize_error(
            failures, state, plan.files if plan else sorted(state.files), gateway,
            binding_debug, entry_path=_entry_path(config.entry_command, state), max_repairs=repairs,
        )
        changed = correct_error(localization, state, plan, context.distilled, gateway,
                                binding_debug, scanner, repairs)
        for path in changed:
            history.record(state.files[path], reason="validation correction")
        notes.append(f"validation corrections touched {len(changed)} file(s)")

    limits = ExecutionLimits(
        wall_seconds=config.budgets.execution_timeout,
        memory_mb=config.budgets.memory_mb,
        env_overrides=config.env_overrides,
    )
    debug_report = debug_loop(
        state, plan, context.distilled, gateway, binding_debug, scanner,
        repo_dir=workspace.repo_dir, runs_dir=workspace.runs_dir,
        scratch_dir=workspace.scratch_dir, entry_command=config.entry_command,
        entry_path=_entry_path(config.entry_command, state), limits=limits,
        max_iterations=config.budgets.max_debug_iterations, max_repairs=repairs,
        history=history,
    )
    context.debug_report = debug_report
    notes.append(f"{debug_report.execute_count} execute iteration(s)")

    if debug_report.succeeded:
        if config.hpo_enabled:
            notes.append(_apply_hpo(context, state, limits, history))
        post = validate_repo(state, context.distilled, gateway, binding_validate, repairs)
        atomic_write_json(workspace.runs_dir / "validation_post.json", _validation_payload(post))
    else:
        notes.append("debug budget exhausted; repository stays draft")

    write_repo(workspace.repo_dir, state)
    _write_report(context, notes)
    _register(context, "implementation", ("repo", "runs", "report.md"))
    if not debug_report.succeeded:
        raise StageError("implement", "debug-loop budget exhausted without a clean run")
    return "; ".join(notes)


def _apply_hpo(context: RunContext, state: RepoState, limits: ExecutionLimits,
               history: RevisionHistory) -> str:
    config, workspace = context.config, context.workspace
    tables = parsing.load_parsed_tables(workspace.parsed_dir)
    hpo = building.extract_hpo_config(
        tables, objective=config.hpo_objective, budget=config.hpo_budget,
    )
    entry_path = _entry_path(config.entry_command, state)
    entry_file = state.files.get(entry_path)
    if entry_file is None:
        return "hpo skipped: entry file not found among generated files"
    revised, note = inject_hpo(entry_file, hpo)
    if revised is entry_file:
        return note
    state.files[entry_path] = revised
    history.record(revised, reason="hpo injection")
    write_repo(workspace.repo_dir, state)
    single = ExecutionLimits(
        wall_seconds=limits.wall_seconds, memory_mb=limits.memory_mb,
        env_overrides={**limits.env_overrides, "SINGLE_RUN": "1"},
    )
    result = run_sandboxed(workspace.repo_dir, config.entry_command, single,
                           scratch_root=workspace.scratch_dir)
    if not result.ok:
        state.status = building.DRAFT
        return note + "; single-run check failed after injection, status downgraded"
    return note + "; single-run check passed"


def _entry_path(entry_command: str, state: RepoState) -> str:
    tokens = entry_command.split()
    for token in tokens[1:]:
        normalized = token.replace("\\", "/")
        if normalized in state.files:
            return normalized
        for path in state.files:
            if Path(path).name == Path(normalized).name:
                return path
    return tokens[-1] if tokens else ""


def _validation_payload(report) -> dict:
    return {
        "aspects": [
            {"aspect": f.aspect, "status": f.status, "anchor": f.anchor,
             "explanation": f.explanation}
            for f in report.findings
        ],
        "passed": report.passed,
    }


def _write_report(context: RunContext, notes: list[str]) -> None:
    state = context.repo
    lines = ["# Run report", ""]
    lines.append(f"- status: {state.status if state else 'unknown'}")
    for note in notes:
        lines.append(f"- {note}")
    if context.debug_report:
        lines.append("")
        lines.append("## Debug iterations")
        for iteration in context.debug_report.iterations:
            if iteration.succeeded:
                lines.append(f"- iter {iteration.index}: clean run")
            else:
                lines.append(
                    f"- iter {iteration.index}: {iteration.error_kind}; localized "
                    f"{', '.join(iteration.localized_files) or '(budget reached)'}; changed "
                    f"{', '.join(iteration.changed_files) or '(none)'}"
                )
    atomic_write_text(context.workspace.root / "report.md", "\n".join(lines) + "\n")


def _register(context: RunContext, stage: str, trees: tuple[str, ...]) -> None:
    for tree in trees:
        target = context.workspace.root / tree
        if target.exists():
            register_tree(context.manifest, stage, context.workspace.root, target)
