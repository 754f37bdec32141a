"""JSON schemas for every structured reasoning task.

Each `reason()` call site passes `{"kind": <task>, "payload": {...}}` together
with the schema registered here for that task kind. A registry test scans the
source tree and asserts every task kind used has a schema, so no reasoning
output ever crosses back into the engine unvalidated.
"""

from __future__ import annotations

from jsonschema import Draft202012Validator

from ..errors import SchemaError

_NUMBER = {"type": "number"}
_NONEMPTY_STRING = {"type": "string", "minLength": 1}

FORMULA_NAMES_SCHEMA = {
    "type": "object",
    "properties": {
        "names": {"type": "array", "items": _NONEMPTY_STRING, "minItems": 1},
    },
    "required": ["names"],
    "additionalProperties": False,
}

PROPOSE_BINDINGS_SCHEMA = {
    "type": "object",
    "properties": {
        "bindings": {
            "type": "object",
            "patternProperties": {r"^[A-Za-z_]\w*$": _NUMBER},
            "additionalProperties": False,
        },
    },
    "required": ["bindings"],
    "additionalProperties": False,
}

_GRAPH_NODE_SCHEMA = {
    "type": "object",
    "properties": {
        "id": _NONEMPTY_STRING,
        "label": _NONEMPTY_STRING,
        "attributes": {"type": "object"},
    },
    "required": ["id", "label"],
    "additionalProperties": False,
}

_GRAPH_EDGE_SCHEMA = {
    "type": "object",
    "properties": {
        "source": _NONEMPTY_STRING,
        "target": _NONEMPTY_STRING,
        "relation": _NONEMPTY_STRING,
        "attributes": {"type": "object"},
    },
    "required": ["source", "target", "relation"],
    "additionalProperties": False,
}

INIT_GRAPH_SCHEMA = {
    "type": "object",
    "properties": {
        "nodes": {"type": "array", "items": _GRAPH_NODE_SCHEMA, "minItems": 1},
        "edges": {"type": "array", "items": _GRAPH_EDGE_SCHEMA},
    },
    "required": ["nodes", "edges"],
    "additionalProperties": False,
}

GRAPH_RESIDUAL_SCHEMA = {
    "type": "object",
    "properties": {
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "entry": {
                        "enum": [
                            "set_attribute",
                            "relabel",
                            "add_edge",
                            "remove_edge",
                        ]
                    },
                    "node": {"type": "string"},
                    "attribute": {"type": "string"},
                    "value": {"type": ["string", "number"]},
                    "label": {"type": "string"},
                    "source": {"type": "string"},
                    "target": {"type": "string"},
                    "relation": {"type": "string"},
                },
                "required": ["entry"],
            },
        },
    },
    "required": ["entries"],
    "additionalProperties": False,
}

REVISE_NARRATIVE_SCHEMA = {
    "type": "object",
    "properties": {"text": _NONEMPTY_STRING},
    "required": ["text"],
    "additionalProperties": False,
}

REINFER_VALUES_SCHEMA = {
    "type": "object",
    "properties": {
        "values": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "t_index": {"type": "integer", "minimum": 1},
                    "object_id": {"type": "string"},
                    "symbol": _NONEMPTY_STRING,
                    "value": _NUMBER,
                    "unit": {"type": "string"},
                },
                "required": ["t_index", "object_id", "symbol", "value"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["values"],
    "additionalProperties": False,
}

PROPOSE_OPERATOR_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["drag", "mask_inpaint", "recolor", "resize", "relight"]},
        "target_node": _NONEMPTY_STRING,
        "region": {
            "type": "object",
            "properties": {
                "x": _NUMBER,
                "y": _NUMBER,
                "w": _NUMBER,
                "h": _NUMBER,
            },
            "required": ["x", "y", "w", "h"],
            "additionalProperties": False,
        },
        "magnitude": _NUMBER,
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "instruction": _NONEMPTY_STRING,
    },
    "required": ["kind", "target_node", "region", "magnitude", "duration_s", "instruction"],
    "additionalProperties": False,
}

REASON_SCHEMAS = {
    "regenerate_formula_names": FORMULA_NAMES_SCHEMA,
    "propose_bindings": PROPOSE_BINDINGS_SCHEMA,
    "init_graph": INIT_GRAPH_SCHEMA,
    "graph_residual": GRAPH_RESIDUAL_SCHEMA,
    "revise_narrative": REVISE_NARRATIVE_SCHEMA,
    "reinfer_values": REINFER_VALUES_SCHEMA,
    "propose_operator": PROPOSE_OPERATOR_SCHEMA,
}


def validate_payload(payload: object, schema: dict) -> None:
    """Check `payload` against `schema`; raise SchemaError naming the fault."""
    if not schema:
        raise SchemaError("empty schema rejected: every reason task declares one")
    errors = sorted(
        Draft202012Validator(schema).iter_errors(payload), key=lambda e: list(e.path)
    )
    if errors:
        first = errors[0]
        path = "/".join(str(p) for p in first.path) or "<root>"
        raise SchemaError(f"reason output invalid at {path}: {first.message}")
