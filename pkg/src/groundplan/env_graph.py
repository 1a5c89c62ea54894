"""Immutable environment graphs and the set algebra used to compare them.

An environment is a set of object nodes (category, states, properties,
optional 3D position) and relation edges. Two comparison regimes exist:

* cross-environment similarity uses category+states signatures, because two
  different scenes share no id space;
* before/after diffing of the *same* scene appends node ids to signatures,
  so two plates where only one changed state stay distinguishable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IntegrityError, InputError


@dataclass(frozen=True)
class GraphNode:
    """One object in the scene. ``states`` are tags like "open"; ``properties``
    are capabilities like "grabbable"."""

    id: int
    category: str
    states: frozenset[str] = frozenset()
    properties: frozenset[str] = frozenset()
    position: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.id <= 0:
            raise IntegrityError(f"node id must be a positive integer, got {self.id}")
        if not self.category:
            raise IntegrityError("node category must be nonempty")
        object.__setattr__(self, "states", frozenset(self.states))
        object.__setattr__(self, "properties", frozenset(self.properties))
        if self.position is not None:
            pos = tuple(float(c) for c in self.position)
            if len(pos) != 3:
                raise IntegrityError(
                    f"node {self.id}: position must have 3 components, got {len(pos)}"
                )
            object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class GraphEdge:
    """Directed relation between two nodes, e.g. (glass, ON, table)."""

    from_id: int
    relation: str
    to_id: int

    def __post_init__(self):
        if not self.relation:
            raise IntegrityError("edge relation must be nonempty")
        object.__setattr__(self, "relation", self.relation.upper())

    def triple(self) -> tuple[int, str, int]:
        return (self.from_id, self.relation, self.to_id)


@dataclass(frozen=True)
class EnvironmentGraph:
    """Value-semantic scene graph; operations return new graphs, never mutate."""

    nodes: tuple[GraphNode, ...] = ()
    edges: tuple[GraphEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        by_id: dict[int, GraphNode] = {}
        for node in self.nodes:
            if node.id in by_id:
                raise IntegrityError(f"duplicate node id {node.id}")
            by_id[node.id] = node
        seen: set[tuple[int, str, int]] = set()
        for edge in self.edges:
            for endpoint in (edge.from_id, edge.to_id):
                if endpoint not in by_id:
                    raise IntegrityError(
                        f"edge {edge.triple()} references missing node {endpoint}"
                    )
            if edge.triple() in seen:
                raise IntegrityError(f"duplicate edge {edge.triple()}")
            seen.add(edge.triple())
        object.__setattr__(self, "_by_id", by_id)

    # -- lookups ---------------------------------------------------------

    def node(self, node_id: int) -> GraphNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise IntegrityError(f"no node with id {node_id}") from None

    def has_node(self, node_id: int) -> bool:
        return node_id in self._by_id

    def has_edge(self, from_id: int, relation: str, to_id: int) -> bool:
        return GraphEdge(from_id, relation, to_id).triple() in {
            e.triple() for e in self.edges
        }

    def edges_from(self, from_id: int, relation: str | None = None) -> tuple[GraphEdge, ...]:
        return tuple(
            e
            for e in self.edges
            if e.from_id == from_id and (relation is None or e.relation == relation.upper())
        )

    def categories(self) -> tuple[str, ...]:
        """All categories present, sorted for deterministic iteration."""
        return tuple(sorted({n.category for n in self.nodes}))

    def nodes_of_category(self, category: str) -> tuple[GraphNode, ...]:
        return tuple(sorted((n for n in self.nodes if n.category == category), key=lambda n: n.id))

    def max_id(self) -> int:
        return max((n.id for n in self.nodes), default=0)

    # -- value-semantic edits (used by the executor) ----------------------

    def with_node(self, node: GraphNode) -> "EnvironmentGraph":
        """Add ``node`` or replace the node with the same id."""
        if self.has_node(node.id):
            nodes = tuple(node if n.id == node.id else n for n in self.nodes)
        else:
            nodes = self.nodes + (node,)
        return EnvironmentGraph(nodes, self.edges)

    def with_edge(self, from_id: int, relation: str, to_id: int) -> "EnvironmentGraph":
        edge = GraphEdge(from_id, relation, to_id)
        if edge.triple() in {e.triple() for e in self.edges}:
            return self
        return EnvironmentGraph(self.nodes, self.edges + (edge,))

    def without_edges(self, triples: set[tuple[int, str, int]]) -> "EnvironmentGraph":
        if not triples:
            return self
        kept = tuple(e for e in self.edges if e.triple() not in triples)
        return EnvironmentGraph(self.nodes, kept)


# -- signatures -----------------------------------------------------------


def node_signature(node: GraphNode) -> str:
    """Canonical identity for cross-graph comparison: category plus sorted
    states; id, properties and position deliberately excluded."""
    return f"{node.category}|{','.join(sorted(node.states))}"


def edge_signature(edge: GraphEdge, graph: EnvironmentGraph) -> str:
    """Category-level rendering so edges of distinct graphs are comparable."""
    return f"{graph.node(edge.from_id).category}|{edge.relation}|{graph.node(edge.to_id).category}"


def _diff_node_signature(node: GraphNode) -> str:
    # Same-scene diffing keeps the id so same-category nodes stay distinct.
    return f"{node_signature(node)}#{node.id}"


def _diff_edge_signature(triple: tuple[int, str, int], graph: EnvironmentGraph) -> str:
    from_id, relation, to_id = triple
    return (
        f"{graph.node(from_id).category}({from_id})|{relation}|"
        f"{graph.node(to_id).category}({to_id})"
    )


# -- set algebra -----------------------------------------------------------


def iou(a: set[str] | frozenset[str], b: set[str] | frozenset[str]) -> float:
    """Intersection over union; two empty sets agree perfectly (1.0)."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def env_similarity(e1: EnvironmentGraph, e2: EnvironmentGraph) -> float:
    """Scene similarity in [0, 2]: node-signature IoU plus edge-signature IoU."""
    nodes1 = {node_signature(n) for n in e1.nodes}
    nodes2 = {node_signature(n) for n in e2.nodes}
    edges1 = {edge_signature(e, e1) for e in e1.edges}
    edges2 = {edge_signature(e, e2) for e in e2.edges}
    return iou(nodes1, nodes2) + iou(edges1, edges2)


def graph_diff(
    initial: EnvironmentGraph, final: EnvironmentGraph
) -> tuple[frozenset[str], frozenset[str]]:
    """Changed nodes and edges between two snapshots of the same scene.

    Nodes: symmetric difference of id-augmented signatures, so a state flip
    contributes both the before and the after signature. Edges: symmetric
    difference of (from_id, relation, to_id) triples, rendered with categories.
    """
    nodes_before = {_diff_node_signature(n) for n in initial.nodes}
    nodes_after = {_diff_node_signature(n) for n in final.nodes}
    changed_nodes = nodes_before ^ nodes_after

    triples_before = {e.triple() for e in initial.edges}
    triples_after = {e.triple() for e in final.edges}
    changed_edges = set()
    for triple in triples_before ^ triples_after:
        source = final if triple in triples_after else initial
        changed_edges.add(_diff_edge_signature(triple, source))
    return frozenset(changed_nodes), frozenset(changed_edges)


# -- JSON interchange -------------------------------------------------------


def environment_from_dict(data: dict, source: str = "<env>") -> EnvironmentGraph:
    """Build a graph from the documented JSON shape, with errors that name
    the offending entry."""
    if not isinstance(data, dict) or "nodes" not in data or "edges" not in data:
        raise InputError(f"{source}: expected an object with 'nodes' and 'edges'")
    nodes = []
    for i, raw in enumerate(data["nodes"]):
        try:
            nodes.append(
                GraphNode(
                    id=int(raw["id"]),
                    category=str(raw["category"]),
                    states=frozenset(raw.get("states", [])),
                    properties=frozenset(raw.get("properties", [])),
                    position=tuple(raw["position"]) if raw.get("position") is not None else None,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{source}: nodes[{i}]: {exc}") from exc
        except IntegrityError as exc:
            raise IntegrityError(f"{source}: nodes[{i}]: {exc}") from exc
    edges = []
    for i, raw in enumerate(data["edges"]):
        try:
            edges.append(
                GraphEdge(int(raw["from_id"]), str(raw["relation"]), int(raw["to_id"]))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{source}: edges[{i}]: {exc}") from exc
    try:
        return EnvironmentGraph(tuple(nodes), tuple(edges))
    except IntegrityError as exc:
        raise IntegrityError(f"{source}: {exc}") from exc


def environment_to_dict(graph: EnvironmentGraph) -> dict:
    """Serialize with nodes sorted by id and edges by triple (stable output)."""
    nodes = []
    for node in sorted(graph.nodes, key=lambda n: n.id):
        entry: dict = {
            "id": node.id,
            "category": node.category,
            "states": sorted(node.states),
            "properties": sorted(node.properties),
        }
        if node.position is not None:
            entry["position"] = list(node.position)
        nodes.append(entry)
    edges = [
        {"from_id": e.from_id, "relation": e.relation, "to_id": e.to_id}
        for e in sorted(graph.edges, key=lambda e: e.triple())
    ]
    return {"nodes": nodes, "edges": edges}


def load_environment(path: str | Path) -> EnvironmentGraph:
    path = Path(path)
    if not path.exists():
        raise InputError(f"environment file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    return environment_from_dict(data, source=str(path))
