"""Dense parameter-trajectory simulation.

A trajectory is produced from declared update rules, never from free-form
reasoning: formulas with `t` among their free variables advance closed-form,
formulas tagged `rate_of` advance by forward Euler on the named symbol, and
every remaining formula is re-evaluated per sample as a derived quantity.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .dimension import Quantity, quantity
from .errors import EvaluationError, UnstableIntegrationError
from .formula.model import Formula

TIME_SYMBOL = "t"

Bindings = Dict[str, Quantity]


@dataclass(frozen=True)
class UpdateRule:
    """One time-evolution rule derived from a formula."""

    kind: str  # "closed_form" | "euler"
    symbol: str  # binding the rule advances
    formula: Formula

    def __post_init__(self):
        if self.kind not in ("closed_form", "euler"):
            raise ValueError(f"unknown update rule kind {self.kind!r}")


def derive_update_rules(formulas: Sequence[Formula]) -> List[UpdateRule]:
    """Split formulas into update rules; order follows the input.

    When a closed-form rule and an Euler rule advance the same symbol, the
    closed form wins (it is exact where the Euler step only approximates).
    """
    rules = []
    for formula in formulas:
        if formula.rate_of:
            rules.append(UpdateRule("euler", formula.rate_of, formula))
        elif TIME_SYMBOL in formula.expr.free_symbols():
            rules.append(UpdateRule("closed_form", formula.target, formula))
    closed = {r.symbol for r in rules if r.kind == "closed_form"}
    return [r for r in rules if r.kind == "closed_form" or r.symbol not in closed]


@dataclass(frozen=True)
class ParameterTrajectory:
    """Dense samples of per-object parameters plus per-sample derived outputs."""

    object_ids: Tuple[str, ...]
    times: Tuple[float, ...]
    samples: Tuple[Dict[str, Bindings], ...]  # one {object: {symbol: Quantity}} per time
    derived: Tuple[Bindings, ...]  # one {symbol: Quantity} per time

    def __post_init__(self):
        if len(self.times) != len(self.samples) or len(self.times) != len(self.derived):
            raise ValueError("times, samples and derived must align")
        for a, b in zip(self.times, self.times[1:]):
            if b <= a:
                raise ValueError(f"times must strictly increase, got {a} then {b}")

    @property
    def n_samples(self) -> int:
        return len(self.times)

    def series_keys(self) -> List[Tuple[str, str]]:
        """All (object_id, symbol) series plus ("", symbol) for derived, sorted."""
        keys = []
        if self.samples:
            for obj in self.object_ids:
                for sym in sorted(self.samples[0][obj]):
                    keys.append((obj, sym))
            for sym in sorted(self.derived[0]):
                keys.append(("", sym))
        return keys

    def series(self, object_id: str, symbol: str) -> List[float]:
        """Raw value series; object_id "" addresses derived quantities."""
        if object_id == "":
            return [float(d[symbol].value) for d in self.derived]
        return [float(s[object_id][symbol].value) for s in self.samples]

    def quantity_at(self, index: int, object_id: str, symbol: str) -> Quantity:
        if object_id == "":
            return self.derived[index][symbol]
        return self.samples[index][object_id][symbol]

    def to_json(self) -> dict:
        return {
            "object_ids": list(self.object_ids),
            "times": list(self.times),
            "samples": [
                {
                    obj: {sym: q.to_json() for sym, q in sorted(binds.items())}
                    for obj, binds in sorted(sample.items())
                }
                for sample in self.samples
            ],
            "derived": [
                {sym: q.to_json() for sym, q in sorted(binds.items())}
                for binds in self.derived
            ],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @staticmethod
    def from_json(data: dict) -> "ParameterTrajectory":
        return ParameterTrajectory(
            object_ids=tuple(data["object_ids"]),
            times=tuple(float(t) for t in data["times"]),
            samples=tuple(
                {
                    obj: {sym: Quantity.from_json(q) for sym, q in binds.items()}
                    for obj, binds in sample.items()
                }
                for sample in data["samples"]
            ),
            derived=tuple(
                {sym: Quantity.from_json(q) for sym, q in binds.items()}
                for binds in data["derived"]
            ),
        )


def _evaluable(formula: Formula, bindings: Bindings, extra: Optional[Bindings] = None) -> bool:
    pool = set(bindings)
    if extra:
        pool |= set(extra)
    defaults = {v.symbol for v in formula.variables if v.default is not None}
    return all(
        sym in pool or sym in defaults
        for sym in formula.expr.free_symbols()
    )


def _eval_at(formula: Formula, bindings: Bindings, time_s: float, index: int) -> Quantity:
    merged = dict(bindings)
    merged[TIME_SYMBOL] = quantity(time_s, "s")
    try:
        return formula.evaluate(merged)
    except EvaluationError:
        raise
    except Exception as exc:
        raise EvaluationError(
            f"formula {formula.id!r} failed at sample {index}: {exc}", sample_index=index
        ) from exc


def simulate_trajectory(
    formulas: Sequence[Formula],
    initial: Dict[str, Bindings],
    horizon: float,
    step: float,
) -> ParameterTrajectory:
    """Simulate per-object bindings over [0, horizon] at fixed step.

    Each rule applies to every object whose bindings cover the formula's free
    variables (minus `t`); derived formulas are evaluated on the first object
    (sorted by id) that can satisfy them.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if horizon < step:
        raise ValueError(f"horizon {horizon} must be >= step {step}")
    rules = derive_update_rules(formulas)
    if not rules:
        raise ValueError("no update rule: at least one formula must depend on time")
    derived_formulas = [
        f
        for f in formulas
        if not f.rate_of and TIME_SYMBOL not in f.expr.free_symbols()
    ]
    object_ids = tuple(sorted(initial))
    if not object_ids:
        raise ValueError("initial bindings must cover at least one object")

    n_steps = int(math.floor(horizon / step + 1e-9))
    times = [round(i * step, 12) for i in range(n_steps + 1)]

    state: Dict[str, Bindings] = {obj: dict(binds) for obj, binds in initial.items()}
    samples: List[Dict[str, Bindings]] = []
    derived_samples: List[Bindings] = []

    def check_finite(q: Quantity, sym: str, index: int) -> Quantity:
        if not math.isfinite(q.value):
            raise UnstableIntegrationError(
                f"{sym!r} became non-finite at sample {index}", sample_index=index
            )
        return q

    for index, time_s in enumerate(times):
        # Closed-form rules pin their symbol directly to f(t); a rule applies
        # to the objects whose initial bindings declare the evolving symbol.
        for rule in rules:
            if rule.kind != "closed_form":
                continue
            for obj in object_ids:
                if rule.symbol not in state[obj]:
                    continue
                if not _evaluable(rule.formula, state[obj], {TIME_SYMBOL: None}):
                    raise EvaluationError(
                        f"closed-form formula {rule.formula.id!r} missing bindings"
                        f" for object {obj!r}",
                        sample_index=index,
                    )
                value = _eval_at(rule.formula, state[obj], time_s, index)
                state[obj][rule.symbol] = check_finite(value, rule.symbol, index)

        derived_now: Bindings = {}
        for formula in derived_formulas:
            for obj in object_ids:
                if formula.target in state[obj]:
                    continue
                if _evaluable(formula, state[obj]):
                    value = _eval_at(formula, state[obj], time_s, index)
                    derived_now[formula.target] = check_finite(value, formula.target, index)
                    break

        samples.append({obj: dict(state[obj]) for obj in object_ids})
        derived_samples.append(derived_now)

        if index == len(times) - 1:
            break

        # Forward Euler advances rate-tagged symbols into the next sample.
        for rule in rules:
            if rule.kind != "euler":
                continue
            for obj in object_ids:
                if rule.symbol not in state[obj]:
                    continue
                if not _evaluable(rule.formula, state[obj]):
                    raise EvaluationError(
                        f"rate formula {rule.formula.id!r} missing bindings for object {obj!r}",
                        sample_index=index,
                    )
                rate = _eval_at(rule.formula, state[obj], time_s, index)
                current = state[obj][rule.symbol]
                advanced = Quantity(
                    current.value + rate.value * step, current.dimension, current.unit_label
                )
                state[obj][rule.symbol] = check_finite(advanced, rule.symbol, index + 1)

    schema = {obj: set(samples[0][obj]) for obj in object_ids}
    for sample in samples:
        for obj in object_ids:
            if set(sample[obj]) != schema[obj]:
                raise EvaluationError(f"binding schema changed mid-run for {obj!r}")

    return ParameterTrajectory(
        object_ids=object_ids,
        times=tuple(times),
        samples=tuple(samples),
        derived=tuple(derived_samples),
    )
