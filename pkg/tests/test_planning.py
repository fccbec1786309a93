"""Planning: anchored architecture/specs/tasks, dependency mapping, diagram export."""

from __future__ import annotations

import pytest

from paperforge.errors import StageError
from paperforge.graphs import parse_dot
from paperforge.parsing import DistilledPaper, Section
from paperforge.planning import (
    ArchitectureEntry,
    ComponentSpec,
    ComponentUnit,
    build_plan,
    export_diagram,
    load_plan,
    map_dependencies,
    persist_plan,
    plan_architecture,
    specify_components,
    write_task,
)
from paperforge.blueprint import Blueprint

from conftest import _resp, make_binding, mock_gateway


def distilled_fixture() -> DistilledPaper:
    return DistilledPaper(sections=[
        Section("sec_0001", "text", "A classifier with a custom contrastive loss.", ("para_0001",)),
        Section("sec_0002", "text", "Data comes from a synthetic generator.", ("para_0002",)),
        Section("sec_0003", "equation", "loss := contrast(a, b)", ("eq_0001",)),
    ])


def arch_playbook(entries, extra_responses=None):
    responses = [_resp({"entries": entries})] + (extra_responses or [])
    return {"rules": [{"stage": "decomposition", "schema": "architecture_plan.v1",
                       "responses": responses}]}


GOOD_ENTRIES = [
    {"path": "data.py", "functionality": "loads data", "anchors": ["sec_0002"]},
    {"path": "loss.py", "functionality": "contrastive loss", "anchors": ["sec_0003"]},
    {"path": "model.py", "functionality": "classifier", "anchors": ["sec_0001"]},
    {"path": "train.py", "functionality": "entry point", "anchors": ["sec_0001"]},
]


def test_architecture_includes_model_loss_and_entry(tmp_path):
    gateway = mock_gateway(tmp_path, arch_playbook(GOOD_ENTRIES))
    entries = plan_architecture(distilled_fixture(), Blueprint.empty(), gateway,
                                make_binding("decomposition"))
    paths = [e.path for e in entries]
    assert {"model.py", "loss.py", "train.py"} <= set(paths)
    assert all(e.anchors for e in entries)


def test_architecture_prompt_carries_the_blueprint_template(tmp_path):
    blueprint = Blueprint(
        sections={
            "repository architecture": "Keep data/ and models/ as packages.",
            "file interdependencies": "Entry scripts import models.",
            "function designs": "Small functions.",
            "class structures": "Models expose forward().",
        },
        provenance=["r1"], corpus_size=1,
    )
    gateway = mock_gateway(tmp_path, arch_playbook(GOOD_ENTRIES))
    plan_architecture(distilled_fixture(), blueprint, gateway, make_binding("decomposition"))
    sent = gateway.backend.sent_payloads[0]["_text"]
    assert "Keep data/ and models/ as packages." in sent


def test_architecture_with_empty_anchor_is_repaired(tmp_path):
    bad = [dict(GOOD_ENTRIES[0], anchors=[])] + GOOD_ENTRIES[1:]
    playbook = arch_playbook(bad, extra_responses=[_resp({"entries": GOOD_ENTRIES})])
    gateway = mock_gateway(tmp_path, playbook)
    entries = plan_architecture(distilled_fixture(), Blueprint.empty(), gateway,
                                make_binding("decomposition"))
    assert all(e.anchors for e in entries)


def test_architecture_too_few_files_exhausts_repairs(tmp_path):
    tiny = [GOOD_ENTRIES[0]]
    gateway = mock_gateway(tmp_path, arch_playbook(tiny))
    with pytest.raises(StageError):
        plan_architecture(distilled_fixture(), Blueprint.empty(), gateway,
                          make_binding("decomposition"), max_repairs=1)


def test_architecture_respects_plan_cap(tmp_path):
    oversized = [
        {"path": f"f{i}.py", "functionality": "x", "anchors": ["sec_0001"]}
        for i in range(6)
    ]
    gateway = mock_gateway(tmp_path, arch_playbook(oversized))
    with pytest.raises(StageError):
        plan_architecture(distilled_fixture(), Blueprint.empty(), gateway,
                          make_binding("decomposition"), plan_cap=5, max_repairs=0)


def spec_playbook(units_by_path: dict[str, list[dict]]):
    rules = []
    for path, units in units_by_path.items():
        rules.append({"stage": "decomposition", "schema": "component_spec.v1",
                      "contains": f"File: {path}",
                      "responses": [_resp({"units": units})]})
    return {"rules": rules}


def test_specify_components_model_class(tmp_path):
    entry = ArchitectureEntry("model.py", "classifier", ("sec_0001",))
    playbook = spec_playbook({"model.py": [
        {"name": "Classifier", "kind": "class", "attributes": ["weights"],
         "methods": ["forward"], "anchors": ["sec_0001"]},
    ]})
    gateway = mock_gateway(tmp_path, playbook)
    spec = specify_components(entry, distilled_fixture(), gateway, make_binding("decomposition"))
    assert spec.unit_names == {"Classifier"}
    assert spec.units[0].kind == "class"


def test_utility_file_with_function_units_only(tmp_path):
    entry = ArchitectureEntry("utils.py", "helpers", ("sec_0002",))
    playbook = spec_playbook({"utils.py": [
        {"name": "seed_everything", "kind": "function", "attributes": ["seed"],
         "methods": ["sets seeds"], "anchors": ["sec_0002"]},
    ]})
    gateway = mock_gateway(tmp_path, playbook)
    spec = specify_components(entry, distilled_fixture(), gateway, make_binding("decomposition"))
    assert all(u.kind == "function" for u in spec.units)


def test_unit_anchored_to_dropped_section_is_repaired_or_fatal(tmp_path):
    entry = ArchitectureEntry("model.py", "classifier", ("sec_0001",))
    playbook = spec_playbook({"model.py": [
        {"name": "Classifier", "kind": "class", "attributes": [], "methods": [],
         "anchors": ["sec_9999"]},  # cites a section that does not exist
    ]})
    gateway = mock_gateway(tmp_path, playbook)
    with pytest.raises(StageError):
        specify_components(entry, distilled_fixture(), gateway,
                           make_binding("decomposition"), max_repairs=1)


def _specs_for(paths_units: dict[str, list[tuple[str, str]]]) -> dict[str, ComponentSpec]:
    specs = {}
    for path, units in paths_units.items():
        specs[path] = ComponentSpec(path, tuple(
            ComponentUnit(name, kind, (), (), ("sec_0001",)) for name, kind in units
        ))
    return specs


def dep_playbook(edges, extra_responses=None, external=None):
    responses = [_resp({"edges": edges, "external": external or []})] + (extra_responses or [])
    return {"rules": [{"stage": "decomposition", "schema": "dependency_map.v1",
                       "responses": responses}]}


def _entries(paths):
    return [ArchitectureEntry(p, "f", ("sec_0001",)) for p in paths]


def test_dependency_chain_and_topological_order(tmp_path):
    specs = _specs_for({"train.py": [("main", "function")],
                        "model.py": [("Net", "class")]})
    gateway = mock_gateway(tmp_path, dep_playbook(
        [{"src": "train.py", "dst": "model.py", "components": ["Net"]}]))
    graph, removed = map_dependencies(specs, _entries(["train.py", "model.py"]), gateway,
                                      make_binding("decomposition"))
    assert removed == []
    from paperforge.graphs import topological_order

    assert topological_order(graph) == ["model.py", "train.py"]


def test_dependency_cycle_from_model_is_broken_with_warning(tmp_path):
    specs = _specs_for({"a.py": [("fa", "function")], "b.py": [("fb", "function")]})
    gateway = mock_gateway(tmp_path, dep_playbook([
        {"src": "a.py", "dst": "b.py", "components": ["fb"]},
        {"src": "b.py", "dst": "a.py", "components": ["fa"]},
    ]))
    graph, removed = map_dependencies(specs, _entries(["a.py", "b.py"]), gateway,
                                      make_binding("decomposition"))
    assert [(e.src, e.dst) for e in removed] == [("a.py", "b.py")]  # tie broken alphabetically
    assert len(graph.edges) == 1


def test_isolated_config_file_still_in_order(tmp_path):
    specs = _specs_for({"train.py": [("main", "function")],
                        "model.py": [("Net", "class")],
                        "config.py": [("defaults", "function")]})
    gateway = mock_gateway(tmp_path, dep_playbook(
        [{"src": "train.py", "dst": "model.py", "components": ["Net"]}]))
    graph, _ = map_dependencies(specs, _entries(["train.py", "model.py", "config.py"]), gateway,
                                make_binding("decomposition"))
    from paperforge.graphs import topological_order

    order = topological_order(graph)
    assert "config.py" in order and not graph.out_edges("config.py")


def test_unresolvable_component_is_repaired(tmp_path):
    specs = _specs_for({"train.py": [("main", "function")],
                        "model.py": [("Net", "class")]})
    bad = [{"src": "train.py", "dst": "model.py", "components": ["Ghost"]}]
    good = [{"src": "train.py", "dst": "model.py", "components": ["Net"]}]
    gateway = mock_gateway(tmp_path, dep_playbook(bad, extra_responses=[
        _resp({"edges": good, "external": []})]))
    graph, _ = map_dependencies(specs, _entries(["train.py", "model.py"]), gateway,
                                make_binding("decomposition"))
    assert graph.edges[0].components == ("Net",)


def test_external_libraries_recorded_as_annotations_not_edges(tmp_path):
    specs = _specs_for({"train.py": [("main", "function")], "model.py": [("Net", "class")]})
    gateway = mock_gateway(tmp_path, dep_playbook(
        [{"src": "train.py", "dst": "model.py", "components": ["Net"]}],
        external=[{"file": "train.py", "libraries": ["numpy", "torch"]}]))
    graph, _ = map_dependencies(specs, _entries(["train.py", "model.py"]), gateway,
                                make_binding("decomposition"))
    assert graph.external["train.py"] == ("numpy", "torch")
    assert len(graph.edges) == 1


def task_playbook(by_path: dict[str, dict], extras: dict[str, list] | None = None):
    rules = []
    for path, payload in by_path.items():
        responses = [_resp(payload)] + [(_resp(e)) for e in (extras or {}).get(path, [])]
        rules.append({"stage": "decomposition", "schema": "task_description.v1",
                      "contains": f"File: {path}", "responses": responses})
    return {"rules": rules}


def _graph_for(specs, edges):
    from paperforge.graphs import DependencyGraph

    graph = DependencyGraph()
    for path in specs:
        graph.add_node(path)
    for src, dst, components in edges:
        graph.add_edge(src, dst, components)
    return graph


def test_write_task_with_no_dependencies_has_empty_consumes(tmp_path):
    specs = _specs_for({"model.py": [("Net", "class")]})
    graph = _graph_for(specs, [])
    playbook = task_playbook({"model.py": {
        "steps": [{"text": "Build the Net class", "anchors": ["sec_0001"]}],
        "exports": ["Net"], "consumes": [],
    }})
    gateway = mock_gateway(tmp_path, playbook)
    task = write_task(ArchitectureEntry("model.py", "m", ("sec_0001",)), specs["model.py"],
                      graph, distilled_fixture(), gateway, make_binding("decomposition"))
    assert task.consumes == ()
    assert task.steps[0].anchors == ("sec_0001",)


def test_task_consuming_unit_outside_edges_is_invariant_failure(tmp_path):
    specs = _specs_for({"train.py": [("main", "function")], "model.py": [("Net", "class")]})
    graph = _graph_for(specs, [("train.py", "model.py", ("Net",))])
    playbook = task_playbook({"train.py": {
        "steps": [{"text": "Train", "anchors": ["sec_0001"]}],
        "exports": ["main"],
        "consumes": [{"file": "model.py", "unit": "Ghost"}],
    }})
    gateway = mock_gateway(tmp_path, playbook)
    with pytest.raises(StageError):
        write_task(ArchitectureEntry("train.py", "t", ("sec_0001",)), specs["train.py"],
                   graph, distilled_fixture(), gateway, make_binding("decomposition"),
                   max_repairs=0)


def test_export_diagram_renders_nodes_edges_and_labels():
    specs = _specs_for({"train.py": [("main", "function")], "model.py": [("Net", "class")]})
    graph = _graph_for(specs, [("train.py", "model.py", ("Net",))])
    graph.nodes["train.py"] = "training"
    graph.nodes["model.py"] = "models"
    dot = export_diagram(graph)
    parsed = parse_dot(dot)
    assert parsed.is_isomorphic_to(graph)
    assert 'label="Net"' in dot


def full_plan_playbook():
    from conftest import SEC, planning_rules

    return {"rules": planning_rules(SEC)}


def mini_distilled():
    from conftest import SEC

    sections = []
    for block, sec_id in SEC.items():
        origin = ("image" if block.startswith("img") else
                  "equation" if block.startswith("eq") else
                  "table" if block.startswith("tbl") else "text")
        sections.append(Section(sec_id, origin, f"content of {block}", (block,)))
    return DistilledPaper(sections=sections)


def test_build_plan_end_to_end_and_persistence_round_trip(tmp_path):
    gateway = mock_gateway(tmp_path, full_plan_playbook())
    plan = build_plan(mini_distilled(), Blueprint.empty(), gateway, make_binding("decomposition"))
    assert plan.files == ["data_loader.py", "model.py", "train.py"]
    assert plan.implementation_order() == ["data_loader.py", "model.py", "train.py"]
    assert plan.tasks["train.py"].consumes == (("model.py", "TinyModel"),
                                               ("data_loader.py", "load_data"))
    # the model file's task cites the architecture figure's section
    from conftest import SEC

    assert SEC["img_0001"] in plan.tasks["model.py"].steps[0].anchors

    persist_plan(tmp_path / "plan", plan)
    restored = load_plan(tmp_path / "plan")
    assert restored.files == plan.files
    assert restored.graph.is_isomorphic_to(plan.graph)
    assert restored.tasks["train.py"].exports == ("main",)
    dot = (tmp_path / "plan" / "graph.dot").read_text()
    assert parse_dot(dot).is_isomorphic_to(plan.graph)
