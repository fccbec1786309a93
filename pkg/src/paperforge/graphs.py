"""File dependency graphs: validation, deterministic ordering, cycle breaking, DOT export.

All tie-breaks are lexicographic so a given graph always yields the same
topological order and, when cycles must be broken, the same removed edges.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field, replace

from .errors import ConfigError

CATEGORY_COLORS = {
    "models": "#c6dbef",
    "data": "#c7e9c0",
    "utils": "#fdd0a2",
    "training": "#fcbba1",
    "evaluation": "#dadaeb",
    "config": "#d9d9d9",
    "other": "#ffffff",
}


class CycleError(Exception):
    def __init__(self, cycle: list[str]):
        super().__init__("cyclic dependency: " + " -> ".join(cycle + cycle[:1]))
        self.cycle = cycle


@dataclass(frozen=True)
class DepEdge:
    src: str  # depending file
    dst: str  # file it depends on
    components: tuple[str, ...] = ()


@dataclass
class DependencyGraph:
    nodes: dict[str, str] = field(default_factory=dict)  # file -> category
    edges: list[DepEdge] = field(default_factory=list)
    external: dict[str, tuple[str, ...]] = field(default_factory=dict)  # node annotations

    def add_node(self, name: str, category: str = "other") -> None:
        self.nodes[name] = category

    def add_edge(self, src: str, dst: str, components: tuple[str, ...] = ()) -> None:
        if src == dst:
            raise ConfigError(f"self-edge not allowed: {src!r}")
        if src not in self.nodes or dst not in self.nodes:
            raise ConfigError(f"edge references unknown node: {src!r} -> {dst!r}")
        self.edges.append(DepEdge(src, dst, tuple(components)))

    def out_edges(self, node: str) -> list[DepEdge]:
        return [e for e in self.edges if e.src == node]

    def is_isomorphic_to(self, other: "DependencyGraph") -> bool:
        """Equality up to edge order (node names are identities here)."""
        return (
            self.nodes == other.nodes
            and sorted((e.src, e.dst, e.components) for e in self.edges)
            == sorted((e.src, e.dst, e.components) for e in other.edges)
        )


def find_cycle(graph: DependencyGraph) -> list[str] | None:
    """Return one cycle as a node list, or None. Deterministic: sorted DFS."""
    adjacency: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for edge in graph.edges:
        adjacency[edge.src].append(edge.dst)
    for targets in adjacency.values():
        targets.sort()

    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in graph.nodes}

    for start in sorted(graph.nodes):
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        path = [start]
        color[start] = GRAY
        while stack:
            node, idx = stack[-1]
            if idx < len(adjacency[node]):
                stack[-1] = (node, idx + 1)
                nxt = adjacency[node][idx]
                if color[nxt] == GRAY:
                    return path[path.index(nxt):]
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, 0))
                    path.append(nxt)
            else:
                color[node] = BLACK
                stack.pop()
                path.pop()
    return None


def break_cycles(graph: DependencyGraph) -> tuple[DependencyGraph, list[DepEdge]]:
    """Remove edges until acyclic.

    Within each detected cycle the edge carrying the fewest referenced
    components goes first; ties break lexicographically on (src, dst). The
    result is deterministic for a given input graph.
    """
    pruned = DependencyGraph(dict(graph.nodes), list(graph.edges), dict(graph.external))
    removed: list[DepEdge] = []
    while True:
        cycle = find_cycle(pruned)
        if cycle is None:
            return pruned, removed
        cycle_pairs = {(cycle[i], cycle[(i + 1) % len(cycle)]) for i in range(len(cycle))}
        candidates = [e for e in pruned.edges if (e.src, e.dst) in cycle_pairs]
        victim = min(candidates, key=lambda e: (len(e.components), e.src, e.dst))
        pruned.edges = [e for e in pruned.edges if e is not victim]
        removed.append(victim)


def topological_order(graph: DependencyGraph) -> list[str]:
    """Dependencies-first order (if a depends on b, b comes earlier); lexicographic ties."""
    out_degree = {n: 0 for n in graph.nodes}
    dependents: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for edge in set((e.src, e.dst) for e in graph.edges):
        src, dst = edge
        out_degree[src] += 1
        dependents[dst].append(src)

    ready = [n for n, deg in out_degree.items() if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for dep in dependents[node]:
            out_degree[dep] -= 1
            if out_degree[dep] == 0:
                heapq.heappush(ready, dep)
    if len(order) != len(graph.nodes):
        cycle = find_cycle(graph)
        raise CycleError(cycle or [n for n in graph.nodes if n not in order])
    return order


# -- DOT export / import -------------------------------------------------------

def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _unquote(text: str) -> str:
    return text.replace('\\"', '"').replace("\\\\", "\\")


def to_dot(graph: DependencyGraph) -> str:
    """Plain-text diagram: one colored node per file, one labeled edge per dependency."""
    lines = ["digraph repository {", "  rankdir=LR;", '  node [shape=box style=filled];']
    for name in sorted(graph.nodes):
        category = graph.nodes[name]
        color = CATEGORY_COLORS.get(category, CATEGORY_COLORS["other"])
        attrs = f'category={_quote(category)} fillcolor={_quote(color)}'
        ext = graph.external.get(name)
        if ext:
            attrs += f' external={_quote(",".join(ext))}'
        lines.append(f"  {_quote(name)} [{attrs}];")
    for edge in sorted(graph.edges, key=lambda e: (e.src, e.dst, e.components)):
        label = ", ".join(edge.components)
        lines.append(f"  {_quote(edge.src)} -> {_quote(edge.dst)} [label={_quote(label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


_QSTR = r'"((?:[^"\\]|\\.)*)"'
_NODE_RE = re.compile(rf"^\s*{_QSTR}\s*\[(.*)\];\s*$")
_EDGE_RE = re.compile(rf"^\s*{_QSTR}\s*->\s*{_QSTR}\s*\[label={_QSTR}\];\s*$")
_ATTR_RE = re.compile(rf"(\w+)={_QSTR}")


def parse_dot(text: str) -> DependencyGraph:
    """Parse diagrams produced by `to_dot` (subset of DOT) back into a graph."""
    graph = DependencyGraph()
    for line in text.splitlines():
        edge_match = _EDGE_RE.match(line)
        if edge_match:
            src, dst, label = (_unquote(g) for g in edge_match.groups())
            components = tuple(c.strip() for c in label.split(",") if c.strip())
            graph.edges.append(DepEdge(src, dst, components))
            continue
        node_match = _NODE_RE.match(line)
        if node_match:
            name = _unquote(node_match.group(1))
            attrs = {k: _unquote(v) for k, v in _ATTR_RE.findall(node_match.group(2))}
            if "category" not in attrs:
                continue  # the global `node [...]` default line
            graph.nodes[name] = attrs.get("category", "other")
            if attrs.get("external"):
                graph.external[name] = tuple(attrs["external"].split(","))
    for edge in graph.edges:
        if edge.src not in graph.nodes or edge.dst not in graph.nodes:
            raise ConfigError(f"diagram edge references undeclared node: {edge.src!r} -> {edge.dst!r}")
    return graph


def graph_to_payload(graph: DependencyGraph) -> dict:
    return {
        "nodes": [{"file": n, "category": c} for n, c in sorted(graph.nodes.items())],
        "edges": [
            {"src": e.src, "dst": e.dst, "components": list(e.components)}
            for e in sorted(graph.edges, key=lambda e: (e.src, e.dst, e.components))
        ],
        "external": {n: list(v) for n, v in sorted(graph.external.items())},
    }


def graph_from_payload(payload: dict) -> DependencyGraph:
    graph = DependencyGraph()
    for node in payload.get("nodes", []):
        graph.nodes[node["file"]] = node.get("category", "other")
    for edge in payload.get("edges", []):
        graph.edges.append(DepEdge(edge["src"], edge["dst"], tuple(edge.get("components", ()))))
    for name, libs in payload.get("external", {}).items():
        graph.external[name] = tuple(libs)
    return graph
