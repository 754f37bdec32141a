"""Event-chain decomposition of a parameter trajectory.

Boundaries fall where the L2 norm of min-max-normalized parameter deltas
(jointly over all objects and derived quantities) exceeds the variation
threshold. Segments reach their final sample's state; chains are validated
for continuity and repaired through bounded re-inference.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .backends.schemas import REINFER_VALUES_SCHEMA
from .dimension import Quantity, parse_unit
from .errors import (
    DegenerateTrajectoryError,
    DimensionError,
    ReInferenceExhaustedError,
)
from .trajectory import Bindings, ParameterTrajectory

DEFAULT_TAU_P = 0.3
DEFAULT_MIN_GAP = 2
DEFAULT_MAX_EVENTS = 6
DEFAULT_KAPPA = 5.0
DEFAULT_MAX_RETRIES = 3

SeriesKey = Tuple[str, str]  # (object_id, symbol); object_id "" = derived


class DeltaNormalizer:
    """Min-max normalization context shared by boundary detection and
    downstream magnitude bounds."""

    def __init__(self, traj: ParameterTrajectory):
        self.keys: List[SeriesKey] = traj.series_keys()
        self._ranges: Dict[SeriesKey, Tuple[float, float]] = {}
        for key in self.keys:
            values = traj.series(*key)
            self._ranges[key] = (min(values), max(values))

    def span(self, key: SeriesKey) -> float:
        lo, hi = self._ranges[key]
        return hi - lo

    def normalize(self, key: SeriesKey, value: float) -> float:
        """Map value into [0,1] over the series range; constants map to 0."""
        lo, hi = self._ranges.get(key, (0.0, 0.0))
        if hi == lo:
            return 0.0
        return (value - lo) / (hi - lo)

    def normalized_delta(self, key: SeriesKey, a: float, b: float) -> float:
        return self.normalize(key, b) - self.normalize(key, a)

    def step_score(self, prev: Dict[SeriesKey, float], curr: Dict[SeriesKey, float]) -> float:
        """L2 norm of the concatenated normalized deltas across all series."""
        total = 0.0
        for key in self.keys:
            d = self.normalized_delta(key, prev[key], curr[key])
            total += d * d
        return math.sqrt(total)

    def node_delta(self, prev: "PhysicalCondition", curr: "PhysicalCondition", object_id: str) -> float:
        """Same norm restricted to one object's parameter series; series a
        condition does not carry contribute nothing."""
        total = 0.0
        for key in self.keys:
            if key[0] != object_id:
                continue
            try:
                a = float(prev.value_of(*key))
                b = float(curr.value_of(*key))
            except KeyError:
                continue
            d = self.normalized_delta(key, a, b)
            total += d * d
        return math.sqrt(total)


def _sample_values(traj: ParameterTrajectory, index: int, keys: Sequence[SeriesKey]) -> Dict[SeriesKey, float]:
    return {key: float(traj.quantity_at(index, *key).value) for key in keys}


def boundary_scores(traj: ParameterTrajectory, normalizer: Optional[DeltaNormalizer] = None) -> List[float]:
    """Per-step scores; entry i-1 scores the transition into sample i."""
    if traj.n_samples < 2:
        raise DegenerateTrajectoryError(
            f"need >= 2 samples to score transitions, got {traj.n_samples}"
        )
    normalizer = normalizer or DeltaNormalizer(traj)
    scores = []
    prev = _sample_values(traj, 0, normalizer.keys)
    for index in range(1, traj.n_samples):
        curr = _sample_values(traj, index, normalizer.keys)
        scores.append(normalizer.step_score(prev, curr))
        prev = curr
    return scores


def detect_boundaries(
    traj: ParameterTrajectory,
    tau_p: float = DEFAULT_TAU_P,
    min_gap: int = DEFAULT_MIN_GAP,
) -> List[int]:
    """Sample indices whose arrival step scores above tau_p, ascending.

    A candidate is kept only when it lies at least min_gap samples after the
    previously kept boundary; min_gap <= 1 disables the spacing rule.
    """
    scores = boundary_scores(traj)
    boundaries = []
    previous = None
    for index in range(1, traj.n_samples):
        if scores[index - 1] <= tau_p:
            continue
        if min_gap > 1 and previous is not None and index - previous < min_gap:
            continue
        boundaries.append(index)
        previous = index
    return boundaries


@dataclass(frozen=True)
class PhysicalCondition:
    """The parameter state an event reaches, with its time span."""

    params: Dict[str, Bindings]  # object_id -> symbol -> Quantity
    derived: Bindings
    t_index: int
    time_span: Tuple[float, float]

    def value_of(self, object_id: str, symbol: str) -> float:
        if object_id == "":
            return float(self.derived[symbol].value)
        return float(self.params[object_id][symbol].value)

    def quantity_of(self, object_id: str, symbol: str) -> Quantity:
        if object_id == "":
            return self.derived[symbol]
        return self.params[object_id][symbol]

    def series_keys(self) -> List[SeriesKey]:
        keys: List[SeriesKey] = []
        for obj in sorted(self.params):
            for sym in sorted(self.params[obj]):
                keys.append((obj, sym))
        for sym in sorted(self.derived):
            keys.append(("", sym))
        return keys

    def with_value(self, object_id: str, symbol: str, value: float) -> "PhysicalCondition":
        if object_id == "":
            old = self.derived[symbol]
            derived = dict(self.derived)
            derived[symbol] = Quantity(value, old.dimension, old.unit_label)
            return replace(self, derived=derived)
        old = self.params[object_id][symbol]
        params = {obj: dict(binds) for obj, binds in self.params.items()}
        params[object_id][symbol] = Quantity(value, old.dimension, old.unit_label)
        return replace(self, params=params)

    def to_json(self) -> dict:
        return {
            "t_index": self.t_index,
            "time_span": list(self.time_span),
            "params": {
                obj: {sym: q.to_json() for sym, q in sorted(binds.items())}
                for obj, binds in sorted(self.params.items())
            },
            "derived": {sym: q.to_json() for sym, q in sorted(self.derived.items())},
        }

    @staticmethod
    def from_json(data: dict) -> "PhysicalCondition":
        return PhysicalCondition(
            params={
                obj: {sym: Quantity.from_json(q) for sym, q in binds.items()}
                for obj, binds in data["params"].items()
            },
            derived={sym: Quantity.from_json(q) for sym, q in data["derived"].items()},
            t_index=int(data["t_index"]),
            time_span=(float(data["time_span"][0]), float(data["time_span"][1])),
        )


def segment(
    traj: ParameterTrajectory,
    boundaries: Sequence[int],
    max_events: int = DEFAULT_MAX_EVENTS,
    scores: Optional[Sequence[float]] = None,
) -> List[PhysicalCondition]:
    """Split the trajectory at the boundaries into T = |boundaries|+1 reached
    states; when T exceeds max_events only the largest-score boundaries stay."""
    n = traj.n_samples
    cleaned: List[int] = []
    for b in boundaries:
        if not 1 <= b <= n - 1:
            raise ValueError(f"boundary {b} outside sample range 1..{n - 1}")
        if cleaned and b <= cleaned[-1]:
            raise ValueError("boundaries must be strictly ascending")
        cleaned.append(b)

    if len(cleaned) + 1 > max_events:
        if scores is None:
            scores = boundary_scores(traj)
        ranked = sorted(cleaned, key=lambda b: (-scores[b - 1], b))
        cleaned = sorted(ranked[: max_events - 1])

    edges = [0] + cleaned + [n]
    conditions = []
    for t_index in range(1, len(edges)):
        start, end = edges[t_index - 1], edges[t_index]
        final = end - 1
        span_end = traj.times[end] if end < n else traj.times[n - 1]
        conditions.append(
            PhysicalCondition(
                params={
                    obj: dict(traj.samples[final][obj]) for obj in traj.object_ids
                },
                derived=dict(traj.derived[final]),
                t_index=t_index,
                time_span=(traj.times[start], span_end),
            )
        )
    return conditions


@dataclass(frozen=True)
class Violation:
    t_index: int
    symbol: str
    object_id: str
    observed_jump: float
    allowed_bound: float

    def to_json(self) -> dict:
        return {
            "t_index": self.t_index,
            "symbol": self.symbol,
            "object_id": self.object_id,
            "observed_jump": self.observed_jump,
            "allowed_bound": self.allowed_bound,
        }


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)
    retry_count: int = 0

    @property
    def accepted(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "violations": [v.to_json() for v in self.violations],
            "retry_count": self.retry_count,
        }


MONOTONE_DIRECTIONS = ("increasing", "decreasing", "free")


def validate_continuity(
    chain: Sequence[PhysicalCondition],
    monotone_decls: Dict[str, str],
    kappa: float = DEFAULT_KAPPA,
) -> ValidationReport:
    """Flag monotone reversals and jumps larger than kappa times the median
    inter-event jump of the same series (median needs >= 3 events)."""
    if not chain:
        raise ValueError("validate_continuity requires a nonempty chain")
    for symbol, direction in monotone_decls.items():
        if direction not in MONOTONE_DIRECTIONS:
            raise ValueError(f"unknown monotone direction {direction!r} for {symbol!r}")
    report = ValidationReport()
    keys = chain[0].series_keys()
    for key in keys:
        obj, sym = key
        values = [cond.value_of(obj, sym) for cond in chain]
        direction = monotone_decls.get(sym, "free")
        for i in range(1, len(values)):
            delta = values[i] - values[i - 1]
            if direction == "increasing" and delta < 0:
                report.violations.append(
                    Violation(chain[i].t_index, sym, obj, delta, 0.0)
                )
            elif direction == "decreasing" and delta > 0:
                report.violations.append(
                    Violation(chain[i].t_index, sym, obj, delta, 0.0)
                )
        if len(values) >= 3:
            jumps = [abs(values[i] - values[i - 1]) for i in range(1, len(values))]
            median = statistics.median(jumps)
            bound = kappa * median
            for i, jump in enumerate(jumps, start=1):
                if jump > bound:
                    report.violations.append(
                        Violation(chain[i].t_index, sym, obj, jump, bound)
                    )
    report.violations.sort(key=lambda v: (v.t_index, v.object_id, v.symbol))
    return report


def _violation_payload(chain: Sequence[PhysicalCondition], violation: Violation) -> dict:
    index = next(
        i for i, cond in enumerate(chain) if cond.t_index == violation.t_index
    )
    obj, sym = violation.object_id, violation.symbol
    entry = {
        "t_index": violation.t_index,
        "object_id": obj,
        "symbol": sym,
        "observed": chain[index].value_of(obj, sym),
    }
    label = chain[index].quantity_of(obj, sym).unit_label
    if label:
        entry["unit"] = label
    if index >= 1:
        entry["prev_value"] = chain[index - 1].value_of(obj, sym)
    if index >= 2:
        entry["prev_prev_value"] = chain[index - 2].value_of(obj, sym)
    if index + 1 < len(chain):
        entry["next_value"] = chain[index + 1].value_of(obj, sym)
    return entry


def reinfer_on_violation(
    report: ValidationReport,
    chain: Sequence[PhysicalCondition],
    reasoner,
    monotone_decls: Dict[str, str],
    kappa: float = DEFAULT_KAPPA,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> List[PhysicalCondition]:
    """Re-request only the violating entries until the chain validates.

    Backend values are dimension-checked against the symbol they replace; the
    loop ends at an empty report or raises ReInferenceExhaustedError carrying
    the final one.
    """
    if report.accepted:
        raise ValueError("reinfer_on_violation requires a report with violations")
    current = list(chain)
    current_report = report
    while current_report.retry_count < max_retries:
        payload = {
            "kind": "reinfer_values",
            "payload": {
                "violations": [
                    _violation_payload(current, v) for v in current_report.violations
                ],
                "monotone": dict(sorted(monotone_decls.items())),
            },
        }
        response = reasoner.reason(payload, REINFER_VALUES_SCHEMA)
        retry_count = current_report.retry_count + 1
        for entry in response["values"]:
            obj = entry["object_id"]
            sym = entry["symbol"]
            t_index = entry["t_index"]
            index = next(
                (i for i, cond in enumerate(current) if cond.t_index == t_index), None
            )
            if index is None:
                continue
            expected = current[index].quantity_of(obj, sym).dimension
            if entry.get("unit"):
                got, _scale = parse_unit(entry["unit"])
                if got != expected:
                    raise DimensionError(
                        f"re-inferred {sym!r} at t_index {t_index} arrived as "
                        f"{entry['unit']!r} ({got}), expected {expected} "
                        f"(retry {retry_count} consumed)"
                    )
            current[index] = current[index].with_value(obj, sym, float(entry["value"]))
        current_report = validate_continuity(current, monotone_decls, kappa=kappa)
        current_report.retry_count = retry_count
        if current_report.accepted:
            return current
    raise ReInferenceExhaustedError(
        f"continuity violations persist after {current_report.retry_count} retries",
        report=current_report,
    )


@dataclass(frozen=True)
class Event:
    """One link of the chain: the condition reached, the scene graph that
    holds there, and the prose describing it."""

    condition: PhysicalCondition
    graph_digest: str
    description: str = ""

    @property
    def t_index(self) -> int:
        return self.condition.t_index


def assemble_chain(
    conditions: Sequence[PhysicalCondition],
    graph_digests: Sequence[str],
    descriptions: Sequence[str],
) -> List[Event]:
    if not (len(conditions) == len(graph_digests) == len(descriptions)):
        raise ValueError("conditions, graphs and descriptions must align")
    events = [
        Event(condition=c, graph_digest=g, description=d)
        for c, g, d in zip(conditions, graph_digests, descriptions)
    ]
    for i, event in enumerate(events, start=1):
        if event.t_index != i:
            raise ValueError(f"chain ordering broken at position {i}: t_index {event.t_index}")
    return events


def chain_to_json(chain: Sequence[PhysicalCondition], trajectory_digest: str, graph_refs: Optional[Sequence[str]] = None) -> dict:
    events = []
    for i, cond in enumerate(chain):
        entry = cond.to_json()
        if graph_refs is not None:
            entry["graph_ref"] = graph_refs[i]
        events.append(entry)
    return {"events": events, "trajectory_digest": trajectory_digest}


def chain_digest(chain: Sequence[PhysicalCondition]) -> str:
    blob = json.dumps([c.to_json() for c in chain], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
