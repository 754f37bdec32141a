"""Scene graphs as immutable values, evolved functionally by deltas.

Nodes keep a stable id for the whole chain; labels and attributes carry the
visible state. Deltas record old values so applying one against a graph it
was not derived from fails loudly instead of corrupting state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .backends.schemas import INIT_GRAPH_SCHEMA
from .dimension import Quantity
from .errors import GraphSchemaError, SchemaError, StaleDeltaError

AttrValue = Union[str, Quantity]


def _attr_to_json(value: AttrValue):
    if isinstance(value, Quantity):
        return value.to_json()
    return value


def _attr_from_json(value) -> AttrValue:
    if isinstance(value, dict) and "value" in value and "dim" in value:
        return Quantity.from_json(value)
    if isinstance(value, (int, float)):
        return str(value)
    return value


@dataclass(frozen=True)
class ObjectNode:
    id: str
    label: str
    attributes: Tuple[Tuple[str, AttrValue], ...] = ()

    @staticmethod
    def make(id: str, label: str, attributes: Optional[Dict[str, AttrValue]] = None) -> "ObjectNode":
        items = tuple(sorted((attributes or {}).items()))
        return ObjectNode(id=id, label=label, attributes=items)

    @property
    def attribute_map(self) -> Dict[str, AttrValue]:
        return dict(self.attributes)

    def get(self, attribute: str, default=None):
        return self.attribute_map.get(attribute, default)

    def with_attribute(self, attribute: str, value: AttrValue) -> "ObjectNode":
        attrs = self.attribute_map
        attrs[attribute] = value
        return ObjectNode.make(self.id, self.label, attrs)

    def with_label(self, label: str) -> "ObjectNode":
        return ObjectNode(id=self.id, label=label, attributes=self.attributes)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "attributes": {k: _attr_to_json(v) for k, v in self.attributes},
        }


@dataclass(frozen=True)
class RelationEdge:
    source: str
    target: str
    relation: str
    attributes: Tuple[Tuple[str, AttrValue], ...] = ()

    @staticmethod
    def make(source: str, target: str, relation: str, attributes: Optional[Dict[str, AttrValue]] = None) -> "RelationEdge":
        return RelationEdge(source, target, relation, tuple(sorted((attributes or {}).items())))

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.source, self.target, self.relation)

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "relation": self.relation,
            "attributes": {k: _attr_to_json(v) for k, v in self.attributes},
        }


@dataclass(frozen=True)
class SceneGraph:
    nodes: Tuple[ObjectNode, ...]
    edges: Tuple[RelationEdge, ...]
    t_index: int = 1

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphSchemaError("duplicate node ids in scene graph")
        id_set = set(ids)
        seen_edges = set()
        for edge in self.edges:
            if edge.source == edge.target:
                raise GraphSchemaError(f"self-loop on node {edge.source!r}")
            if edge.source not in id_set or edge.target not in id_set:
                raise GraphSchemaError(
                    f"edge {edge.key} references a node missing from the graph"
                )
            if edge.key in seen_edges:
                raise GraphSchemaError(f"duplicate edge {edge.key}")
            seen_edges.add(edge.key)

    @staticmethod
    def make(nodes: Sequence[ObjectNode], edges: Sequence[RelationEdge], t_index: int = 1) -> "SceneGraph":
        return SceneGraph(
            nodes=tuple(sorted(nodes, key=lambda n: n.id)),
            edges=tuple(sorted(edges, key=lambda e: e.key)),
            t_index=t_index,
        )

    def node(self, node_id: str) -> ObjectNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(f"no node {node_id!r} in scene graph")

    def has_node(self, node_id: str) -> bool:
        return any(n.id == node_id for n in self.nodes)

    def has_edge(self, source: str, target: str, relation: str) -> bool:
        return any(e.key == (source, target, relation) for e in self.edges)

    def node_ids(self) -> Tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def surface_names(self) -> Dict[str, str]:
        """id -> label, the mention vocabulary narrative validation uses."""
        return {n.id: n.label for n in self.nodes}

    def equal_content(self, other: "SceneGraph") -> bool:
        return self.nodes == other.nodes and self.edges == other.edges

    def to_json(self) -> dict:
        return {
            "t_index": self.t_index,
            "nodes": [n.to_json() for n in self.nodes],
            "edges": [e.to_json() for e in self.edges],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @staticmethod
    def from_json(data: dict) -> "SceneGraph":
        try:
            nodes = [
                ObjectNode.make(
                    str(n["id"]),
                    str(n["label"]),
                    {str(k): _attr_from_json(v) for k, v in n.get("attributes", {}).items()},
                )
                for n in data["nodes"]
            ]
            edges = [
                RelationEdge.make(
                    str(e["source"]),
                    str(e["target"]),
                    str(e["relation"]),
                    {str(k): _attr_from_json(v) for k, v in e.get("attributes", {}).items()},
                )
                for e in data.get("edges", [])
            ]
        except (KeyError, TypeError) as exc:
            raise GraphSchemaError(f"malformed scene graph JSON: {exc}") from exc
        return SceneGraph.make(nodes, edges, t_index=int(data.get("t_index", 1)))


# --- deltas ---------------------------------------------------------------------


@dataclass(frozen=True)
class Provenance:
    """The condition change that justified a delta entry."""

    symbol: str
    object_id: str
    change: str

    def to_json(self) -> dict:
        return {"symbol": self.symbol, "object_id": self.object_id, "change": self.change}


@dataclass(frozen=True)
class DeltaEntry:
    """One atomic graph change with its old-value guard and provenance."""

    entry: str  # set_attribute | relabel | add_edge | remove_edge | add_node
    provenance: Provenance
    node: str = ""
    attribute: str = ""
    old: Optional[AttrValue] = None
    new: Optional[AttrValue] = None
    source: str = ""
    target: str = ""
    relation: str = ""
    added_node: Optional[ObjectNode] = None

    def __post_init__(self):
        if not self.provenance.symbol:
            raise GraphSchemaError("delta entry requires nonempty provenance")

    def to_json(self) -> dict:
        data = {"entry": self.entry, "provenance": self.provenance.to_json()}
        if self.entry in ("set_attribute", "relabel"):
            data.update(
                node=self.node,
                attribute=self.attribute,
                old=_attr_to_json(self.old),
                new=_attr_to_json(self.new),
            )
        elif self.entry in ("add_edge", "remove_edge"):
            data.update(source=self.source, target=self.target, relation=self.relation)
        elif self.entry == "add_node":
            data.update(added_node=self.added_node.to_json())
        return data


@dataclass(frozen=True)
class GraphDelta:
    entries: Tuple[DeltaEntry, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.entries

    def to_json(self) -> dict:
        return {"entries": [e.to_json() for e in self.entries]}


def init_graph(description: str, reasoner) -> SceneGraph:
    """Ask the reasoner for an initial scene graph and validate it."""
    if not description.strip():
        raise ValueError("init_graph requires a nonempty description")
    response = reasoner.reason(
        {"kind": "init_graph", "payload": {"description": description}},
        INIT_GRAPH_SCHEMA,
    )
    try:
        graph = SceneGraph.from_json({"t_index": 1, **response})
    except GraphSchemaError:
        raise
    except SchemaError as exc:
        raise GraphSchemaError(str(exc)) from exc
    return graph


def apply_delta(prev: SceneGraph, delta: GraphDelta) -> SceneGraph:
    """Apply a delta functionally; t_index always advances by one."""
    nodes: Dict[str, ObjectNode] = {n.id: n for n in prev.nodes}
    edges: Dict[Tuple[str, str, str], RelationEdge] = {e.key: e for e in prev.edges}

    for entry in delta.entries:
        if entry.entry == "set_attribute":
            if entry.node not in nodes:
                raise StaleDeltaError(
                    f"set_attribute targets missing node {entry.node!r}"
                )
            node = nodes[entry.node]
            current = node.get(entry.attribute)
            if current != entry.old:
                raise StaleDeltaError(
                    f"{entry.node}.{entry.attribute} is {current!r}, "
                    f"delta expected {entry.old!r}"
                )
            nodes[entry.node] = node.with_attribute(entry.attribute, entry.new)
        elif entry.entry == "relabel":
            if entry.node not in nodes:
                raise StaleDeltaError(f"relabel targets missing node {entry.node!r}")
            node = nodes[entry.node]
            if node.label != entry.old:
                raise StaleDeltaError(
                    f"{entry.node} label is {node.label!r}, delta expected {entry.old!r}"
                )
            nodes[entry.node] = node.with_label(str(entry.new))
        elif entry.entry == "add_edge":
            key = (entry.source, entry.target, entry.relation)
            if entry.source not in nodes or entry.target not in nodes:
                raise StaleDeltaError(f"add_edge {key} references a missing node")
            if key in edges:
                raise StaleDeltaError(f"edge {key} already present")
            edges[key] = RelationEdge.make(*key)
        elif entry.entry == "remove_edge":
            key = (entry.source, entry.target, entry.relation)
            if key not in edges:
                raise StaleDeltaError(f"remove_edge {key}: edge not present")
            del edges[key]
        elif entry.entry == "add_node":
            added = entry.added_node
            if added is None or added.id in nodes:
                raise StaleDeltaError(
                    f"add_node with missing payload or duplicate id"
                )
            nodes[added.id] = added
        else:
            raise GraphSchemaError(f"unknown delta entry kind {entry.entry!r}")

    return SceneGraph.make(
        nodes=list(nodes.values()), edges=list(edges.values()), t_index=prev.t_index + 1
    )
