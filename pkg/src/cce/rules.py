"""Declarative trigger rules driving scene-graph updates.

Line-oriented DSL (machine-readable EBNF in docs/rule_dsl.ebnf):

    when ice.T crosses 0[degC] rising -> set ice.phase = liquid
    when ball.h >= 0.25 -> remove_edge ball approaches water
    when derived.f_a crosses 0.5 rising -> relabel solution to red solution

The series names an object's symbol; the reserved object `derived` addresses
formula outputs. Rules fire deterministically on (previous, current)
condition pairs; whatever they do not cover is requested from the reasoner
and validated before joining the delta.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .backends.schemas import GRAPH_RESIDUAL_SCHEMA
from .dimension import quantity
from .errors import (
    FormulaSyntaxError,
    GraphSchemaError,
    RuleConflictError,
    UnknownUnitError,
)
from .events import PhysicalCondition, SeriesKey
from .scenegraph import DeltaEntry, GraphDelta, ObjectNode, Provenance, SceneGraph

DERIVED_OBJECT = "derived"

_COMPARATORS = (">=", "<=", ">", "<")

_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


@dataclass(frozen=True)
class RuleCondition:
    kind: str  # cmp | crosses | changes_sign | increases | decreases
    comparator: str = ""
    threshold: float = 0.0
    direction: str = ""  # rising | falling, for crosses

    def fires(self, prev: float, curr: float) -> bool:
        if self.kind == "cmp":
            return {
                ">=": curr >= self.threshold,
                "<=": curr <= self.threshold,
                ">": curr > self.threshold,
                "<": curr < self.threshold,
            }[self.comparator]
        if self.kind == "crosses":
            if self.direction == "rising":
                return prev < self.threshold <= curr
            return prev > self.threshold >= curr
        if self.kind == "changes_sign":
            sign = lambda v: (v > 0) - (v < 0)
            return sign(prev) != sign(curr)
        if self.kind == "increases":
            return curr > prev
        if self.kind == "decreases":
            return curr < prev
        raise ValueError(f"unknown condition kind {self.kind!r}")


@dataclass(frozen=True)
class RuleAction:
    kind: str  # set | relabel | add_edge | remove_edge
    node: str = ""
    attribute: str = ""
    value: str = ""
    source: str = ""
    relation: str = ""
    target: str = ""

    def slot(self) -> Optional[Tuple[str, str]]:
        """The (node, attribute) cell this action writes, for conflict checks."""
        if self.kind == "set":
            return (self.node, self.attribute)
        if self.kind == "relabel":
            return (self.node, "__label__")
        return None


@dataclass(frozen=True)
class TriggerRule:
    series: SeriesKey
    condition: RuleCondition
    action: RuleAction
    source_line: str = ""


def _parse_threshold(token: str, line_no: int) -> float:
    m = _NUMBER_RE.match(token)
    if not m:
        raise FormulaSyntaxError(f"rule line {line_no}: expected a number, got {token!r}", 0)
    value = float(m.group(0))
    rest = token[m.end():]
    if rest:
        if not (rest.startswith("[") and rest.endswith("]")):
            raise FormulaSyntaxError(
                f"rule line {line_no}: bad unit annotation {rest!r}", 0
            )
        try:
            return quantity(value, rest[1:-1]).value
        except (UnknownUnitError, FormulaSyntaxError) as exc:
            raise FormulaSyntaxError(f"rule line {line_no}: {exc}", 0) from exc
    return value


def _parse_series(token: str, line_no: int) -> SeriesKey:
    if "." not in token:
        raise FormulaSyntaxError(
            f"rule line {line_no}: series must be object.symbol, got {token!r}", 0
        )
    obj, sym = token.split(".", 1)
    if obj == DERIVED_OBJECT:
        obj = ""
    return (obj, sym)


def parse_rule(line: str, line_no: int = 0) -> TriggerRule:
    if "->" not in line:
        raise FormulaSyntaxError(f"rule line {line_no}: missing '->'", 0)
    head, action_text = (part.strip() for part in line.split("->", 1))
    tokens = head.split()
    if len(tokens) < 3 or tokens[0] != "when":
        raise FormulaSyntaxError(
            f"rule line {line_no}: expected 'when <series> <condition>'", 0
        )
    series = _parse_series(tokens[1], line_no)
    cond_tokens = tokens[2:]
    if cond_tokens[0] in _COMPARATORS:
        if len(cond_tokens) != 2:
            raise FormulaSyntaxError(f"rule line {line_no}: comparator needs a value", 0)
        condition = RuleCondition(
            "cmp", comparator=cond_tokens[0], threshold=_parse_threshold(cond_tokens[1], line_no)
        )
    elif cond_tokens[0] == "crosses":
        if len(cond_tokens) != 3 or cond_tokens[2] not in ("rising", "falling"):
            raise FormulaSyntaxError(
                f"rule line {line_no}: crosses needs '<value> rising|falling'", 0
            )
        condition = RuleCondition(
            "crosses",
            threshold=_parse_threshold(cond_tokens[1], line_no),
            direction=cond_tokens[2],
        )
    elif cond_tokens[0] in ("changes_sign", "increases", "decreases"):
        if len(cond_tokens) != 1:
            raise FormulaSyntaxError(
                f"rule line {line_no}: {cond_tokens[0]} takes no operands", 0
            )
        condition = RuleCondition(cond_tokens[0])
    else:
        raise FormulaSyntaxError(
            f"rule line {line_no}: unknown condition {cond_tokens[0]!r}", 0
        )

    action = _parse_action(action_text, line_no)
    return TriggerRule(series=series, condition=condition, action=action, source_line=line.strip())


def _parse_action(text: str, line_no: int) -> RuleAction:
    tokens = text.split()
    if not tokens:
        raise FormulaSyntaxError(f"rule line {line_no}: empty action", 0)
    kind = tokens[0]
    if kind == "set":
        rest = text[len("set"):].strip()
        if "=" not in rest:
            raise FormulaSyntaxError(f"rule line {line_no}: set needs 'node.attr = value'", 0)
        lhs, value = (part.strip() for part in rest.split("=", 1))
        if "." not in lhs or not value:
            raise FormulaSyntaxError(f"rule line {line_no}: set needs 'node.attr = value'", 0)
        node, attribute = lhs.split(".", 1)
        return RuleAction("set", node=node, attribute=attribute, value=value.strip('"'))
    if kind == "relabel":
        rest = tokens[1:]
        if len(rest) < 3 or rest[1] != "to":
            raise FormulaSyntaxError(
                f"rule line {line_no}: relabel needs '<node> to <label>'", 0
            )
        return RuleAction("relabel", node=rest[0], value=" ".join(rest[2:]).strip('"'))
    if kind in ("add_edge", "remove_edge"):
        if len(tokens) != 4:
            raise FormulaSyntaxError(
                f"rule line {line_no}: {kind} needs '<source> <relation> <target>'", 0
            )
        return RuleAction(kind, source=tokens[1], relation=tokens[2], target=tokens[3])
    raise FormulaSyntaxError(f"rule line {line_no}: unknown action {kind!r}", 0)


def parse_rules(source: str) -> List[TriggerRule]:
    rules = []
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rules.append(parse_rule(line, line_no))
    return rules


def load_rules(path) -> List[TriggerRule]:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())


# --- delta derivation -------------------------------------------------------------


def _changed_series(prev_cond: PhysicalCondition, cond: PhysicalCondition):
    changes = []
    for key in cond.series_keys():
        prev_v = prev_cond.value_of(*key)
        curr_v = cond.value_of(*key)
        if prev_v != curr_v:
            changes.append((key, prev_v, curr_v))
    return changes


def _provenance_for(key: SeriesKey, prev_v: float, curr_v: float) -> Provenance:
    obj, sym = key
    return Provenance(
        symbol=sym,
        object_id=obj,
        change=f"{prev_v:g} -> {curr_v:g}",
    )


def _materialize(action: RuleAction, graph: SceneGraph, provenance: Provenance) -> Optional[DeltaEntry]:
    """Turn a fired action into a delta entry; None when it would be a no-op."""
    if action.kind == "set":
        if not graph.has_node(action.node):
            raise GraphSchemaError(f"rule sets attribute on unknown node {action.node!r}")
        old = graph.node(action.node).get(action.attribute)
        if old == action.value:
            return None
        return DeltaEntry(
            entry="set_attribute",
            provenance=provenance,
            node=action.node,
            attribute=action.attribute,
            old=old,
            new=action.value,
        )
    if action.kind == "relabel":
        if not graph.has_node(action.node):
            raise GraphSchemaError(f"rule relabels unknown node {action.node!r}")
        old = graph.node(action.node).label
        if old == action.value:
            return None
        return DeltaEntry(
            entry="relabel",
            provenance=provenance,
            node=action.node,
            attribute="__label__",
            old=old,
            new=action.value,
        )
    if action.kind == "add_edge":
        for endpoint in (action.source, action.target):
            if not graph.has_node(endpoint):
                raise GraphSchemaError(f"rule adds edge to unknown node {endpoint!r}")
        if graph.has_edge(action.source, action.target, action.relation):
            return None
        return DeltaEntry(
            entry="add_edge",
            provenance=provenance,
            source=action.source,
            target=action.target,
            relation=action.relation,
        )
    if action.kind == "remove_edge":
        if not graph.has_edge(action.source, action.target, action.relation):
            return None
        return DeltaEntry(
            entry="remove_edge",
            provenance=provenance,
            source=action.source,
            target=action.target,
            relation=action.relation,
        )
    raise ValueError(f"unknown action kind {action.kind!r}")


def _check_conflicts(entries: Sequence[DeltaEntry]) -> List[DeltaEntry]:
    """Reject two writes of different values to one slot; dedupe identical ones."""
    kept: List[DeltaEntry] = []
    slots: Dict[Tuple[str, str], DeltaEntry] = {}
    edge_ops: Dict[Tuple[str, str, str], DeltaEntry] = {}
    for entry in entries:
        if entry.entry in ("set_attribute", "relabel"):
            slot = (entry.node, entry.attribute)
            if slot in slots:
                previous = slots[slot]
                if previous.new != entry.new:
                    raise RuleConflictError(
                        f"two rules write {slot[0]}.{slot[1]} with different values "
                        f"({previous.new!r} vs {entry.new!r})"
                    )
                continue
            slots[slot] = entry
        elif entry.entry in ("add_edge", "remove_edge"):
            key = (entry.source, entry.target, entry.relation)
            if key in edge_ops:
                previous = edge_ops[key]
                if previous.entry != entry.entry:
                    raise RuleConflictError(
                        f"rules both add and remove edge {key}"
                    )
                continue
            edge_ops[key] = entry
        kept.append(entry)
    return kept


def derive_delta(
    prev_graph: SceneGraph,
    prev_cond: PhysicalCondition,
    cond: PhysicalCondition,
    rules: Sequence[TriggerRule],
    reasoner=None,
) -> GraphDelta:
    """Fire trigger rules on the condition change, then ask the reasoner for
    residual changes; identical conditions yield an empty delta with no call."""
    if prev_graph.t_index != cond.t_index - 1:
        raise ValueError(
            f"graph t_index {prev_graph.t_index} does not precede condition "
            f"t_index {cond.t_index}"
        )
    changes = _changed_series(prev_cond, cond)
    if not changes:
        return GraphDelta(())
    change_map = {key: (prev_v, curr_v) for key, prev_v, curr_v in changes}

    proposed: List[DeltaEntry] = []
    for rule in rules:
        try:
            prev_v = prev_cond.value_of(*rule.series)
            curr_v = cond.value_of(*rule.series)
        except KeyError:
            continue
        if not rule.condition.fires(prev_v, curr_v):
            continue
        provenance = _provenance_for(rule.series, prev_v, curr_v)
        entry = _materialize(rule.action, prev_graph, provenance)
        if entry is not None:
            proposed.append(entry)
    entries = _check_conflicts(proposed)

    if reasoner is not None:
        residual = _request_residual(prev_graph, cond, changes, entries, reasoner)
        # Rules are authoritative: residual entries may not override their slots.
        taken = {
            (e.node, e.attribute) for e in entries if e.entry in ("set_attribute", "relabel")
        }
        taken_edges = {
            (e.source, e.target, e.relation)
            for e in entries
            if e.entry in ("add_edge", "remove_edge")
        }
        residual = [
            e
            for e in residual
            if (e.entry in ("set_attribute", "relabel") and (e.node, e.attribute) not in taken)
            or (e.entry in ("add_edge", "remove_edge") and (e.source, e.target, e.relation) not in taken_edges)
            or e.entry == "add_node"
        ]
        entries = _check_conflicts(list(entries) + residual)

    return GraphDelta(tuple(entries))


def _request_residual(
    prev_graph: SceneGraph,
    cond: PhysicalCondition,
    changes,
    planned: Sequence[DeltaEntry],
    reasoner,
) -> List[DeltaEntry]:
    payload = {
        "kind": "graph_residual",
        "payload": {
            "graph": prev_graph.to_json(),
            "t_index": cond.t_index,
            "changes": [
                {"object_id": key[0], "symbol": key[1], "prev": prev_v, "curr": curr_v}
                for key, prev_v, curr_v in changes
            ],
            "planned": [entry.to_json() for entry in planned],
        },
    }
    response = reasoner.reason(payload, GRAPH_RESIDUAL_SCHEMA)
    first_key, first_prev, first_curr = changes[0]
    provenance = _provenance_for(first_key, first_prev, first_curr)
    residual: List[DeltaEntry] = []
    for item in response["entries"]:
        kind = item["entry"]
        if kind == "set_attribute":
            node = item.get("node", "")
            if not prev_graph.has_node(node):
                raise GraphSchemaError(f"residual sets attribute on unknown node {node!r}")
            action = RuleAction(
                "set", node=node, attribute=item.get("attribute", ""), value=str(item.get("value", ""))
            )
        elif kind == "relabel":
            node = item.get("node", "")
            if not prev_graph.has_node(node):
                raise GraphSchemaError(f"residual relabels unknown node {node!r}")
            action = RuleAction("relabel", node=node, value=str(item.get("label", "")))
        elif kind in ("add_edge", "remove_edge"):
            action = RuleAction(
                kind,
                source=item.get("source", ""),
                relation=item.get("relation", ""),
                target=item.get("target", ""),
            )
        else:
            raise GraphSchemaError(f"residual entry kind {kind!r} not supported")
        entry = _materialize(action, prev_graph, provenance)
        if entry is not None:
            residual.append(entry)
    return residual
