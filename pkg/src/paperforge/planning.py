"""Hierarchical implementation planning: architecture, component specs, dependency
graph, and per-file task descriptions, persisted so implementation can restart
mid-plan.

Every planned unit carries paper-section anchors; anchor resolution is checked
mechanically after each model call so plans cannot drift away from the
distilled paper.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .gateway import ChatRequest, LlmGateway, StageBinding, TextPart
from .graphs import (
    DependencyGraph,
    DepEdge,
    break_cycles,
    graph_from_payload,
    graph_to_payload,
    to_dot,
    topological_order,
)
from .blueprint import Blueprint
from .parsing import DistilledPaper
from . import prompts
from .workspace import atomic_write_json, atomic_write_text, read_json, sanitize_relpath

log = logging.getLogger(__name__)

DEFAULT_PLAN_CAP = 30
MIN_PLAN_FILES = 3

_ROLE_CATEGORIES = {
    "model": "models", "models": "models", "net": "models", "network": "models",
    "data": "data", "dataset": "data", "loader": "data",
    "train": "training", "training": "training", "main": "training", "run": "training",
    "eval": "evaluation", "evaluate": "evaluation", "test": "evaluation", "metric": "evaluation",
    "config": "config", "settings": "config",
    "util": "utils", "utils": "utils", "helpers": "utils",
}


@dataclass(frozen=True)
class ArchitectureEntry:
    path: str
    functionality: str
    anchors: tuple[str, ...]


@dataclass(frozen=True)
class ComponentUnit:
    name: str
    kind: str  # class | function
    attributes: tuple[str, ...]
    methods: tuple[str, ...]
    anchors: tuple[str, ...]


@dataclass(frozen=True)
class ComponentSpec:
    path: str
    units: tuple[ComponentUnit, ...]

    @property
    def unit_names(self) -> set[str]:
        return {u.name for u in self.units}


@dataclass(frozen=True)
class TaskStep:
    text: str
    anchors: tuple[str, ...]


@dataclass(frozen=True)
class TaskDescription:
    path: str
    steps: tuple[TaskStep, ...]
    exports: tuple[str, ...]
    consumes: tuple[tuple[str, str], ...]  # (file, unit)


@dataclass
class TaskPlan:
    entries: list[ArchitectureEntry]
    specs: dict[str, ComponentSpec]
    graph: DependencyGraph
    tasks: dict[str, TaskDescription]
    removed_edges: list[DepEdge] = field(default_factory=list)

    @property
    def files(self) -> list[str]:
        return [e.path for e in self.entries]

    def validate(self) -> None:
        files = set(self.files)
        if set(self.graph.nodes) != files:
            raise ConfigError("graph nodes must equal plan files exactly")
        if set(self.tasks) != files:
            raise ConfigError("every plan file needs a task description")
        for edge in self.graph.edges:
            spec = self.specs[edge.dst]
            for component in edge.components:
                if component not in spec.unit_names:
                    raise ConfigError(
                        f"edge {edge.src} -> {edge.dst} names unknown unit {component!r}"
                    )

    def implementation_order(self) -> list[str]:
        return topological_order(self.graph)


def category_for_path(path: str) -> str:
    stem = Path(path).stem.lower()
    for token, category in _ROLE_CATEGORIES.items():
        if token in stem:
            return category
    top = path.split("/")[0].lower()
    return _ROLE_CATEGORIES.get(top, "other")


def _render_distilled(distilled: DistilledPaper, limit: int | None = None) -> str:
    sections = distilled.sections[:limit] if limit else distilled.sections
    return "\n".join(f"[{s.id}] {s.text}" for s in sections)


def plan_architecture(
    distilled: DistilledPaper,
    blueprint: Blueprint,
    gateway: LlmGateway,
    binding: StageBinding,
    *,
    plan_cap: int = DEFAULT_PLAN_CAP,
    max_repairs: int = 2,
) -> list[ArchitectureEntry]:
    known_sections = distilled.section_ids()

    def validate(value: Any) -> list[str]:
        problems = []
        entries = value["entries"]
        if len(entries) < MIN_PLAN_FILES:
            problems.append(f"plan needs at least {MIN_PLAN_FILES} files")
        if len(entries) > plan_cap:
            problems.append(f"plan exceeds the {plan_cap}-file cap")
        paths = [e["path"] for e in entries]
        if len(set(paths)) != len(paths):
            problems.append("file paths must be unique")
        for entry in entries:
            anchors = [a for a in entry["anchors"] if a in known_sections]
            if not anchors:
                problems.append(f"{entry['path']}: needs at least one resolvable paper anchor")
        return problems

    blueprint_text = blueprint.render_markdown()
    request = ChatRequest(
        system_prompt=prompts.ARCHITECTURE_SYSTEM,
        user_parts=(TextPart(prompts.ARCHITECTURE_USER.format(
            blueprint=blueprint_text, distilled=_render_distilled(distilled), cap=plan_cap)),),
        response_schema="architecture_plan.v1",
    )
    result = gateway.complete_validated(request, binding, validate, max_repairs)
    return [
        ArchitectureEntry(
            path=e["path"],
            functionality=e["functionality"],
            anchors=tuple(a for a in e["anchors"] if a in known_sections),
        )
        for e in result.value["entries"]
    ]


def specify_components(
    entry: ArchitectureEntry,
    distilled: DistilledPaper,
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int = 2,
) -> ComponentSpec:
    known_sections = distilled.section_ids()

    def validate(value: Any) -> list[str]:
        problems = []
        names = [u["name"] for u in value["units"]]
        if len(set(names)) != len(names):
            problems.append("unit names must be unique within a file")
        for unit in value["units"]:
            if not [a for a in unit["anchors"] if a in known_sections]:
                problems.append(f"unit {unit['name']!r}: needs a resolvable paper anchor")
            if unit["kind"] == "function" and unit["attributes"]:
                # parameters ride in `attributes` for functions; that is allowed
                pass
        return problems

    request = ChatRequest(
        system_prompt=prompts.COMPONENTS_SYSTEM,
        user_parts=(TextPart(prompts.COMPONENTS_USER.format(
            path=entry.path, functionality=entry.functionality,
            distilled=_render_distilled(distilled))),),
        response_schema="component_spec.v1",
    )
    result = gateway.complete_validated(request, binding, validate, max_repairs)
    units = tuple(
        ComponentUnit(
            name=u["name"], kind=u["kind"], attributes=tuple(u["attributes"]),
            methods=tuple(u["methods"]),
            anchors=tuple(a for a in u["anchors"] if a in known_sections),
        )
        for u in result.value["units"]
    )
    return ComponentSpec(path=entry.path, units=units)


def map_dependencies(
    specs: dict[str, ComponentSpec],
    entries: list[ArchitectureEntry],
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int = 2,
) -> tuple[DependencyGraph, list[DepEdge]]:
    if not specs:
        raise ConfigError("cannot map dependencies without component specs")
    files = set(specs)

    def validate(value: Any) -> list[str]:
        problems = []
        for edge in value["edges"]:
            if edge["src"] not in files or edge["dst"] not in files:
                problems.append(f"edge {edge['src']} -> {edge['dst']}: unknown file")
                continue
            if edge["src"] == edge["dst"]:
                problems.append(f"self-edge on {edge['src']} is not allowed")
                continue
            target_units = specs[edge["dst"]].unit_names
            for component in edge["components"]:
                if component not in target_units:
                    problems.append(
                        f"edge {edge['src']} -> {edge['dst']}: {component!r} is not a unit of {edge['dst']}"
                    )
        return problems

    listing = []
    for path in sorted(specs):
        units = ", ".join(f"{u.name} ({u.kind})" for u in specs[path].units)
        listing.append(f"- {path}: {units or '(no units)'}")
    request = ChatRequest(
        system_prompt=prompts.DEPENDENCIES_SYSTEM,
        user_parts=(TextPart(prompts.DEPENDENCIES_USER.format(specs="\n".join(listing))),),
        response_schema="dependency_map.v1",
    )
    result = gateway.complete_validated(request, binding, validate, max_repairs)

    graph = DependencyGraph()
    for entry in entries:
        graph.add_node(entry.path, category_for_path(entry.path))
    deduped: dict[tuple[str, str], tuple[str, ...]] = {}
    for edge in result.value["edges"]:
        key = (edge["src"], edge["dst"])
        merged = tuple(dict.fromkeys(deduped.get(key, ()) + tuple(edge["components"])))
        deduped[key] = merged
    for (src, dst), components in sorted(deduped.items()):
        graph.add_edge(src, dst, components)
    for annotation in result.value.get("external", []):
        if annotation["file"] in files:
            graph.external[annotation["file"]] = tuple(annotation["libraries"])

    acyclic, removed = break_cycles(graph)
    for edge in removed:
        log.warning("dependency cycle broken: removed %s -> %s (%s)", edge.src, edge.dst, edge.components)
    return acyclic, removed


def write_task(
    entry: ArchitectureEntry,
    spec: ComponentSpec,
    graph: DependencyGraph,
    distilled: DistilledPaper,
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int = 2,
) -> TaskDescription:
    known_sections = distilled.section_ids()
    consumable: set[tuple[str, str]] = set()
    for edge in graph.out_edges(entry.path):
        for component in edge.components:
            consumable.add((edge.dst, component))

    def validate(value: Any) -> list[str]:
        problems = []
        if not value["steps"]:
            problems.append("task needs at least one step")
        for i, step in enumerate(value["steps"]):
            if not [a for a in step["anchors"] if a in known_sections]:
                problems.append(f"step {i + 1}: needs a resolvable paper anchor")
        for name in value["exports"]:
            if name not in spec.unit_names:
                problems.append(f"export {name!r} is not a unit of {entry.path}")
        for consume in value["consumes"]:
            if (consume["file"], consume["unit"]) not in consumable:
                problems.append(
                    f"consumed unit {consume['unit']!r} from {consume['file']!r} "
                    "is not on any dependency edge of this file"
                )
        return problems

    deps_lines = [
        f"- {edge.dst}: {', '.join(edge.components) or '(unspecified)'}"
        for edge in graph.out_edges(entry.path)
    ]
    spec_lines = [
        f"- {u.name} ({u.kind}; attrs/params: {', '.join(u.attributes) or 'none'}; "
        f"methods/behaviors: {', '.join(u.methods) or 'none'})"
        for u in spec.units
    ]
    request = ChatRequest(
        system_prompt=prompts.TASK_SYSTEM,
        user_parts=(TextPart(prompts.TASK_USER.format(
            path=entry.path, spec="\n".join(spec_lines) or "(none)",
            deps="\n".join(deps_lines) or "(none)",
            distilled=_render_distilled(distilled))),),
        response_schema="task_description.v1",
    )
    result = gateway.complete_validated(request, binding, validate, max_repairs)
    return TaskDescription(
        path=entry.path,
        steps=tuple(
            TaskStep(s["text"], tuple(a for a in s["anchors"] if a in known_sections))
            for s in result.value["steps"]
        ),
        exports=tuple(result.value["exports"]),
        consumes=tuple((c["file"], c["unit"]) for c in result.value["consumes"]),
    )


def build_plan(
    distilled: DistilledPaper,
    blueprint: Blueprint,
    gateway: LlmGateway,
    binding: StageBinding,
    *,
    plan_cap: int = DEFAULT_PLAN_CAP,
    max_repairs: int = 2,
) -> TaskPlan:
    entries = plan_architecture(distilled, blueprint, gateway, binding,
                                plan_cap=plan_cap, max_repairs=max_repairs)
    specs = {
        entry.path: specify_components(entry, distilled, gateway, binding, max_repairs)
        for entry in entries
    }
    graph, removed = map_dependencies(specs, entries, gateway, binding, max_repairs)

    tasks: dict[str, TaskDescription] = {}
    by_path = {entry.path: entry for entry in entries}
    for path in topological_order(graph):  # dependencies first
        tasks[path] = write_task(by_path[path], specs[path], graph, distilled, gateway,
                                 binding, max_repairs)
    plan = TaskPlan(entries=entries, specs=specs, graph=graph, tasks=tasks, removed_edges=removed)
    plan.validate()
    return plan


def export_diagram(graph: DependencyGraph) -> str:
    return to_dot(graph)


# -- persistence -------------------------------------------------------------------

def persist_plan(plan_dir: Path, plan: TaskPlan) -> None:
    plan_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_json(plan_dir / "architecture.json", {
        "entries": [
            {"path": e.path, "functionality": e.functionality, "anchors": list(e.anchors)}
            for e in plan.entries
        ]
    })
    specs_dir = plan_dir / "specs"
    specs_dir.mkdir(exist_ok=True)
    for path, spec in sorted(plan.specs.items()):
        atomic_write_json(specs_dir / f"{sanitize_relpath(path)}.json", {
            "path": spec.path,
            "units": [
                {"name": u.name, "kind": u.kind, "attributes": list(u.attributes),
                 "methods": list(u.methods), "anchors": list(u.anchors)}
                for u in spec.units
            ],
        })
    payload = graph_to_payload(plan.graph)
    payload["removed_edges"] = [
        {"src": e.src, "dst": e.dst, "components": list(e.components)} for e in plan.removed_edges
    ]
    atomic_write_json(plan_dir / "graph.json", payload)
    atomic_write_text(plan_dir / "graph.dot", export_diagram(plan.graph))
    tasks_dir = plan_dir / "tasks"
    tasks_dir.mkdir(exist_ok=True)
    for path, task in sorted(plan.tasks.items()):
        atomic_write_json(tasks_dir / f"task_{sanitize_relpath(path)}.json", {
            "path": task.path,
            "steps": [{"text": s.text, "anchors": list(s.anchors)} for s in task.steps],
            "exports": list(task.exports),
            "consumes": [{"file": f, "unit": u} for f, u in task.consumes],
        })


def load_plan(plan_dir: Path) -> TaskPlan:
    arch = read_json(plan_dir / "architecture.json")
    entries = [
        ArchitectureEntry(e["path"], e["functionality"], tuple(e["anchors"]))
        for e in arch["entries"]
    ]
    specs: dict[str, ComponentSpec] = {}
    for entry in entries:
        payload = read_json(plan_dir / "specs" / f"{sanitize_relpath(entry.path)}.json")
        specs[entry.path] = ComponentSpec(
            path=payload["path"],
            units=tuple(
                ComponentUnit(u["name"], u["kind"], tuple(u["attributes"]),
                              tuple(u["methods"]), tuple(u["anchors"]))
                for u in payload["units"]
            ),
        )
    graph_payload = read_json(plan_dir / "graph.json")
    graph = graph_from_payload(graph_payload)
    removed = [
        DepEdge(e["src"], e["dst"], tuple(e["components"]))
        for e in graph_payload.get("removed_edges", [])
    ]
    tasks: dict[str, TaskDescription] = {}
    for entry in entries:
        payload = read_json(plan_dir / "tasks" / f"task_{sanitize_relpath(entry.path)}.json")
        tasks[entry.path] = TaskDescription(
            path=payload["path"],
            steps=tuple(TaskStep(s["text"], tuple(s["anchors"])) for s in payload["steps"]),
            exports=tuple(payload["exports"]),
            consumes=tuple((c["file"], c["unit"]) for c in payload["consumes"]),
        )
    plan = TaskPlan(entries=entries, specs=specs, graph=graph, tasks=tasks, removed_edges=removed)
    plan.validate()
    return plan
