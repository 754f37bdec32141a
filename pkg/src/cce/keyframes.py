"""Bounded edit-operator planning and sequential keyframe synthesis.

Operators are proposed by the reasoning backend but constrained by the
numbers: magnitude lives inside a band around the normalized parameter delta
of the target node, regions stay inside the unit square, and time spans stay
inside configured bounds. Keyframes are content-addressed; repeating an
identical edit request is a cache hit, not a backend call.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backends.base import ImageEditBackend, ReasoningBackend, content_key
from .backends.schemas import PROPOSE_OPERATOR_SCHEMA
from .errors import (
    BackendError,
    ImageShapeError,
    SchemaError,
    UnknownNodeError,
)
from .events import DeltaNormalizer, PhysicalCondition
from .imaging import (
    COLOR_HUES,
    ImageCache,
    blank_canvas,
    first_color_in,
    hue_to_rgb,
    image_digest,
    render_cue_overlay,
)
from .scenegraph import SceneGraph

logger = logging.getLogger(__name__)

EDIT_KINDS = ("drag", "mask_inpaint", "recolor", "resize", "relight")
DEFAULT_D_MIN = 0.5
DEFAULT_D_MAX = 10.0
BOUND_BAND = 0.2
DEFAULT_WIDTH = 1360
DEFAULT_HEIGHT = 768


@dataclass(frozen=True)
class TimeSpan:
    """Seconds between consecutive events; always positive."""

    d: float

    def __post_init__(self):
        if not (self.d > 0 and math.isfinite(self.d)):
            raise ValueError(f"time span must be positive and finite, got {self.d}")


@dataclass(frozen=True)
class EditOperator:
    kind: str
    target_node: str
    region: Tuple[float, float, float, float]  # x, y, w, h in [0,1]
    magnitude: float
    bounds: Tuple[float, float]
    instruction: str
    extras: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        lo, hi = self.bounds
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"bounds {self.bounds} must satisfy 0 <= lo <= hi <= 1")
        if not (lo <= self.magnitude <= hi):
            raise ValueError(
                f"magnitude {self.magnitude} outside bounds ({lo}, {hi})"
            )
        x, y, w, h = self.region
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ValueError(f"region origin ({x}, {y}) outside [0,1]")
        if w < 0 or h < 0 or x + w > 1.0 + 1e-9 or y + h > 1.0 + 1e-9:
            raise ValueError(f"region {self.region} exceeds the unit square")

    def to_payload(self) -> dict:
        x, y, w, h = self.region
        payload = {
            "kind": self.kind,
            "target_node": self.target_node,
            "region": {"x": x, "y": y, "w": w, "h": h},
            "magnitude": self.magnitude,
            "instruction": self.instruction,
        }
        extras = dict(self.extras)
        dx = extras.pop("dx", None)
        dy = extras.pop("dy", None)
        if dx is not None or dy is not None:
            payload["vector"] = {"dx": dx or 0.0, "dy": dy or 0.0}
        payload.update(extras)
        return payload

    def to_json(self) -> dict:
        body = self.to_payload()
        body["bounds"] = list(self.bounds)
        return body

    def content_key(self) -> str:
        return content_key(self.to_json())


@dataclass(frozen=True, eq=False)
class Keyframe:
    t_index: int
    image: np.ndarray  # H x W x 3 uint8
    image_ref: str
    source: str  # "generated" | "edited"
    from_t_index: Optional[int] = None
    operator_key: Optional[str] = None

    def __post_init__(self):
        if self.source not in ("generated", "edited"):
            raise ValueError(f"unknown keyframe source {self.source!r}")
        if self.source == "edited" and self.from_t_index is None:
            raise ValueError("edited keyframes must name their source frame")

    def to_json(self) -> dict:
        return {
            "t_index": self.t_index,
            "image_ref": self.image_ref,
            "source": self.source,
            "from_t_index": self.from_t_index,
            "operator_key": self.operator_key,
        }


def graph_changes(prev_graph: SceneGraph, graph: SceneGraph) -> List[Dict[str, str]]:
    """Attribute, label, and relation differences between consecutive graphs,
    ordered deterministically (nodes by id, then edges)."""
    changes: List[Dict[str, str]] = []
    for node_id in prev_graph.node_ids():
        if not graph.has_node(node_id):
            continue
        before = prev_graph.node(node_id)
        after = graph.node(node_id)
        if before.label != after.label:
            changes.append(
                {"node": node_id, "attribute": "label", "old": before.label, "new": after.label}
            )
        before_attrs = dict(before.attributes)
        after_attrs = dict(after.attributes)
        for attr in sorted(set(before_attrs) | set(after_attrs)):
            old = before_attrs.get(attr)
            new = after_attrs.get(attr)
            if old != new:
                changes.append(
                    {"node": node_id, "attribute": attr, "old": str(old), "new": str(new)}
                )
    prev_edges = {(e.source, e.target, e.relation) for e in prev_graph.edges}
    next_edges = {(e.source, e.target, e.relation) for e in graph.edges}
    for src, dst, rel in sorted(next_edges - prev_edges):
        changes.append({"node": src, "attribute": "relation", "old": "", "new": f"{src} {rel} {dst}"})
    for src, dst, rel in sorted(prev_edges - next_edges):
        changes.append({"node": src, "attribute": "relation", "old": f"{src} {rel} {dst}", "new": ""})
    return changes


def _pick_target(
    changes: Sequence[Dict[str, str]],
    prev_cond: PhysicalCondition,
    cond: PhysicalCondition,
    normalizer: DeltaNormalizer,
    graph: SceneGraph,
) -> str:
    candidates = []
    seen = set()
    for change in changes:
        node = change["node"]
        if node not in seen and graph.has_node(node):
            seen.add(node)
            candidates.append(node)
    if not candidates:
        candidates = list(graph.node_ids())
    if not candidates:
        raise UnknownNodeError("graph has no nodes to target")
    scored = sorted(
        candidates,
        key=lambda node: (-normalizer.node_delta(prev_cond, cond, node), node),
    )
    return scored[0]


def _clamp(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


def _region_violation(region: dict) -> Optional[str]:
    try:
        x, y, w, h = (float(region[k]) for k in ("x", "y", "w", "h"))
    except (KeyError, TypeError, ValueError):
        return f"region {region!r} is missing numeric x/y/w/h"
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        return f"region origin ({x}, {y}) outside [0,1]"
    if w <= 0 or h <= 0:
        return f"region extent ({w}, {h}) must be positive"
    if x + w > 1.0 + 1e-9 or y + h > 1.0 + 1e-9:
        return f"region ({x}, {y}, {w}, {h}) exceeds the unit square"
    return None


def _recolor_extras(changes: Sequence[Dict[str, str]], target: str) -> Tuple[Tuple[str, float], ...]:
    for change in changes:
        if change["node"] == target and change["attribute"] == "color":
            hue = COLOR_HUES.get(change["new"].strip().lower())
            if hue is not None:
                return (("target_hue", hue),)
    return ()


def noop_operator(target_node: str) -> EditOperator:
    return EditOperator(
        kind="recolor",
        target_node=target_node,
        region=(0.0, 0.0, 1.0, 1.0),
        magnitude=0.0,
        bounds=(0.0, 0.0),
        instruction="no change",
    )


def plan_operator(
    prev_cond: PhysicalCondition,
    prev_graph: SceneGraph,
    cond: PhysicalCondition,
    graph: SceneGraph,
    reasoner: ReasoningBackend,
    normalizer: DeltaNormalizer,
    d_min: float = DEFAULT_D_MIN,
    d_max: float = DEFAULT_D_MAX,
) -> Tuple[EditOperator, TimeSpan]:
    """Propose, validate, and clamp the edit taking the scene across one event.

    The magnitude band is (max(0, 0.8*delta), min(1, 1.2*delta)) around the
    target node's normalized parameter delta; a zero delta degenerates to a
    no-op recolor without consulting the backend.
    """
    if cond.t_index != prev_cond.t_index + 1:
        raise ValueError(
            f"conditions must be consecutive, got {prev_cond.t_index} -> {cond.t_index}"
        )
    changes = graph_changes(prev_graph, graph)
    target = _pick_target(changes, prev_cond, cond, normalizer, graph)
    if not graph.has_node(target):
        raise UnknownNodeError(f"target node {target!r} missing from graph")
    delta = normalizer.node_delta(prev_cond, cond, target)
    span_hint = cond.time_span[1] - cond.time_span[0]
    if span_hint <= 0:
        span_hint = (d_min + d_max) / 2.0
    if delta == 0.0:
        return noop_operator(target), TimeSpan(_clamp(span_hint, d_min, d_max))

    bounds = (max(0.0, delta * (1.0 - BOUND_BAND)), min(1.0, delta * (1.0 + BOUND_BAND)))
    body = {
        "target_node": target,
        "delta": delta,
        "changes": [c for c in changes if c["node"] == target]
        + [c for c in changes if c["node"] != target],
        "span_hint": span_hint,
        "t_index": cond.t_index,
    }
    response = None
    violation = None
    for _attempt in range(2):
        payload = dict(body)
        if violation:
            payload["violation"] = violation
        candidate = reasoner.reason(
            {"kind": "propose_operator", "payload": payload}, PROPOSE_OPERATOR_SCHEMA
        )
        violation = _region_violation(candidate["region"])
        if violation is None:
            response = candidate
            break
    if response is None:
        raise SchemaError(f"operator region invalid after retry: {violation}")

    magnitude = float(response["magnitude"])
    clamped = _clamp(magnitude, *bounds)
    if clamped != magnitude:
        logger.warning(
            "operator magnitude %.4f clamped into bounds (%.4f, %.4f)",
            magnitude,
            bounds[0],
            bounds[1],
        )
    duration = _clamp(float(response["duration_s"]), d_min, d_max)
    region = response["region"]
    operator = EditOperator(
        kind=response["kind"],
        target_node=target,
        region=(
            float(region["x"]),
            float(region["y"]),
            float(region["w"]),
            float(region["h"]),
        ),
        magnitude=clamped,
        bounds=bounds,
        instruction=response["instruction"],
        extras=_recolor_extras(changes, target) if response["kind"] == "recolor" else (),
    )
    return operator, TimeSpan(duration)


# --- synthesis ---------------------------------------------------------------------


def _generation_operator(prompt: str) -> dict:
    color = first_color_in(prompt)
    if color is None:
        return {
            "kind": "recolor",
            "region": {"x": 0.0, "y": 0.0, "w": 1.0, "h": 1.0},
            "magnitude": 0.0,
            "instruction": prompt,
        }
    r, g, b = hue_to_rgb(COLOR_HUES[color])
    return {
        "kind": "mask_inpaint",
        "region": {"x": 0.0, "y": 0.0, "w": 1.0, "h": 1.0},
        "magnitude": 1.0,
        "fill_rgb": [r, g, b],
        "instruction": prompt,
    }


def _cache_key(prev_digest: str, operator_payload: dict, instruction: str) -> str:
    return content_key(
        {"prev": prev_digest, "operator": operator_payload, "instruction": instruction}
    )


def _cached_edit(
    editor: ImageEditBackend,
    image: np.ndarray,
    cue_overlay: Optional[np.ndarray],
    instruction: str,
    operator_payload: dict,
    cache: Optional[ImageCache],
    t_index: int,
) -> np.ndarray:
    key = _cache_key(image_digest(image), operator_payload, instruction)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    try:
        result = editor.edit_image(image, cue_overlay, instruction, operator=operator_payload)
    except BackendError as exc:
        raise BackendError(
            f"edit backend failed at t_index {t_index}: {exc}",
            attempts=getattr(exc, "attempts", 1),
            code=getattr(exc, "code", "transport"),
        ) from exc
    result = np.asarray(result, dtype=np.uint8)
    if result.shape != image.shape:
        raise ImageShapeError(
            f"edit backend returned shape {result.shape}, expected {image.shape} "
            f"(t_index {t_index})"
        )
    if cache is not None:
        cache.put(key, result)
    return result


def synthesize_keyframes(
    chain: Sequence[PhysicalCondition],
    operators: Sequence[EditOperator],
    first_prompt: str,
    editor: ImageEditBackend,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    cache: Optional[ImageCache] = None,
) -> List[Keyframe]:
    """One keyframe per event: the first is generated from the prompt on a
    blank canvas, each later frame edits its predecessor under the operator."""
    if len(operators) != len(chain) - 1:
        raise ValueError(
            f"need exactly {len(chain) - 1} operators for {len(chain)} events, "
            f"got {len(operators)}"
        )
    if not chain:
        raise ValueError("chain must contain at least one event")

    canvas = blank_canvas(width, height)
    gen_payload = _generation_operator(first_prompt)
    image = _cached_edit(
        editor, canvas, None, first_prompt, gen_payload, cache, chain[0].t_index
    )
    frames = [
        Keyframe(
            t_index=chain[0].t_index,
            image=image,
            image_ref=image_digest(image),
            source="generated",
        )
    ]
    for cond, operator in zip(chain[1:], operators):
        payload = operator.to_payload()
        cue = render_cue_overlay(frames[-1].image, payload)
        image = _cached_edit(
            editor,
            frames[-1].image,
            cue,
            operator.instruction,
            payload,
            cache,
            cond.t_index,
        )
        frames.append(
            Keyframe(
                t_index=cond.t_index,
                image=image,
                image_ref=image_digest(image),
                source="edited",
                from_t_index=cond.t_index - 1,
                operator_key=operator.content_key(),
            )
        )
    return frames
