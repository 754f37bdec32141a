"""Progressive narrative revision and prompt condensation.

Each event's description extends the previous one with only the changes the
graph delta proved; revisions are validated so object mentions survive and
direction-forbidden words stay out. Condensation deduplicates clauses across
events, joins them with causal connectives, and assembles the negative
prompt from the configured lexicon plus the forbidden-direction words.
"""

from __future__ import annotations

import difflib
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backends.schemas import REVISE_NARRATIVE_SCHEMA
from .errors import (
    BudgetError,
    DimensionMismatchError,
    NarrativeValidationError,
)
from .events import PhysicalCondition
from .scenegraph import DeltaEntry, GraphDelta, SceneGraph

logger = logging.getLogger(__name__)

CONNECTIVES = ("then", "as a result", "gradually", "until", "causing")
DEFAULT_TOKEN_BUDGET = 226
REVISION_WARN_FRACTION = 0.4

# Words excluded when a symbol is declared monotone in a direction; realizes
# "rising temperature allows melting and excludes freezing".
FORBIDDEN_BY_DIRECTION: Dict[Tuple[str, str], Tuple[str, ...]] = {
    ("T", "increasing"): ("freezing", "freezes", "freeze", "solidifies", "solidifying"),
    ("T", "decreasing"): ("melting", "melts", "melt", "boiling", "boils"),
    ("h", "increasing"): ("floats", "floating", "surfacing"),
    ("h", "decreasing"): ("sinks", "sinking"),
    ("x", "increasing"): ("extends", "stretches", "relaxes"),
    ("x", "decreasing"): ("compresses", "compressing"),
    ("pH", "increasing"): ("acidifies", "more acidic"),
    ("pH", "decreasing"): ("alkaline", "more basic"),
}

_PHASE_VERBS = {
    ("solid", "liquid"): "melts into a liquid",
    ("liquid", "gas"): "evaporates into vapor",
    ("liquid", "solid"): "freezes solid",
    ("gas", "liquid"): "condenses into droplets",
}


@dataclass(frozen=True)
class EventNarrative:
    t_index: int
    text: str
    changed_spans: Tuple[Tuple[int, int], ...] = ()

    def to_json(self) -> dict:
        return {
            "t_index": self.t_index,
            "text": self.text,
            "changed_spans": [list(span) for span in self.changed_spans],
        }


@dataclass(frozen=True)
class PromptPair:
    positive: str
    negative: str
    connectives_used: Tuple[str, ...] = ()
    token_estimate: int = 0

    def to_json(self) -> dict:
        return {
            "positive": self.positive,
            "negative": self.negative,
            "connectives_used": list(self.connectives_used),
            "token_estimate": self.token_estimate,
        }


@dataclass(frozen=True)
class PromptEmbedding:
    positive_vec: np.ndarray
    negative_vec: np.ndarray

    @property
    def concatenated(self) -> np.ndarray:
        return np.concatenate([self.positive_vec, self.negative_vec])


def forbidden_words(monotone_decls: Dict[str, str]) -> List[str]:
    """Direction-forbidden lexemes for the declared monotone symbols, sorted."""
    words: List[str] = []
    for symbol, direction in monotone_decls.items():
        words.extend(FORBIDDEN_BY_DIRECTION.get((symbol, direction), ()))
    return sorted(set(words))


def load_negative_lexicon(path=None) -> List[str]:
    """Negative-prompt phrases, one per line; '#' comments and blanks skipped."""
    if path is None:
        text = resources.files("cce.data").joinpath("negative_lexicon.txt").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    phrases = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            phrases.append(line)
    return phrases


# --- revision ---------------------------------------------------------------------


def change_phrases(delta: GraphDelta, graph: SceneGraph) -> List[str]:
    """Deterministic rendering of delta entries into clause fragments."""
    labels = graph.surface_names()
    # Subjects read better under their pre-relabel names.
    for entry in delta.entries:
        if entry.entry == "relabel" and entry.node is not None:
            labels[entry.node] = str(entry.old)
    phrases = []
    for entry in delta.entries:
        phrases.append(_phrase_for(entry, labels))
    return phrases


def _phrase_for(entry: DeltaEntry, labels: Dict[str, str]) -> str:
    if entry.entry == "set_attribute":
        subject = labels.get(entry.node, entry.node)
        if entry.attribute == "phase":
            verb = _PHASE_VERBS.get((str(entry.old), str(entry.new)))
            if verb:
                return f"the {subject} {verb}"
            return f"the {subject} turns {entry.new}"
        if entry.attribute == "color":
            return f"the {subject} turns from {entry.old} to {entry.new}"
        return f"the {subject} {entry.attribute} changes to {entry.new}"
    if entry.entry == "relabel":
        return f"the {entry.old} becomes a {entry.new}"
    if entry.entry == "add_edge":
        relation = entry.relation.replace("_", " ")
        return (
            f"the {labels.get(entry.source, entry.source)} now {relation} "
            f"the {labels.get(entry.target, entry.target)}"
        )
    if entry.entry == "remove_edge":
        relation = entry.relation.replace("_", " ")
        return (
            f"the {labels.get(entry.source, entry.source)} no longer {relation} "
            f"the {labels.get(entry.target, entry.target)}"
        )
    if entry.entry == "add_node" and entry.added_node is not None:
        return f"a {entry.added_node.label} appears"
    return "the scene shifts"


def _diff_spans(prev: str, new: str) -> Tuple[Tuple[int, int], ...]:
    matcher = difflib.SequenceMatcher(a=prev, b=new, autojunk=False)
    spans = []
    for tag, _i1, _i2, j1, j2 in matcher.get_opcodes():
        if tag != "equal":
            spans.append((j1, j2))
    return tuple(spans)


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance; texts here are short so the DP is fine."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def _validate_text(text: str, graph: SceneGraph, forbidden: Sequence[str]):
    lowered = text.lower()
    missing = [
        label
        for label in graph.surface_names().values()
        if label.lower() not in lowered
    ]
    present_forbidden = [word for word in forbidden if word.lower() in lowered]
    return missing, present_forbidden


def revise(
    prev: EventNarrative,
    cond: PhysicalCondition,
    delta: GraphDelta,
    reasoner,
    graph: SceneGraph,
    monotone_decls: Optional[Dict[str, str]] = None,
) -> EventNarrative:
    """Produce the next event description from the previous one plus the delta.

    An empty delta is a revision of nothing: the text is carried forward. The
    backend output must still mention every object and avoid the forbidden
    direction words; one retry carries the violation back, then it errors.
    """
    if prev.t_index != cond.t_index - 1:
        raise ValueError(
            f"narrative t_index {prev.t_index} does not precede condition {cond.t_index}"
        )
    if delta.empty:
        return EventNarrative(t_index=cond.t_index, text=prev.text, changed_spans=())

    forbidden = forbidden_words(monotone_decls or {})
    changes = change_phrases(delta, graph)
    payload_body = {
        "prev_text": prev.text,
        "changes": changes,
        "objects": sorted(graph.surface_names().values()),
        "forbidden": forbidden,
        "t_index": cond.t_index,
    }
    violation_note = None
    for _attempt in range(2):
        body = dict(payload_body)
        if violation_note:
            body["violation"] = violation_note
        response = reasoner.reason(
            {"kind": "revise_narrative", "payload": body}, REVISE_NARRATIVE_SCHEMA
        )
        text = response["text"]
        missing, present_forbidden = _validate_text(text, graph, forbidden)
        if not missing and not present_forbidden:
            spans = _diff_spans(prev.text, text)
            _warn_if_oversized(prev.text, text, delta)
            return EventNarrative(t_index=cond.t_index, text=text, changed_spans=spans)
        violation_note = (
            f"missing mentions: {missing}; forbidden words present: {present_forbidden}"
        )
    raise NarrativeValidationError(
        f"revision invalid after retry ({violation_note})",
        missing=missing,
        forbidden=present_forbidden,
    )


def _warn_if_oversized(prev_text: str, text: str, delta: GraphDelta) -> None:
    touched_nodes = {
        e.node or e.source for e in delta.entries
    }
    if len(touched_nodes) != 1 or not prev_text:
        return
    distance = edit_distance(prev_text, text)
    if distance > REVISION_WARN_FRACTION * len(prev_text):
        logger.warning(
            "revision quality: edit distance %d exceeds %.0f%% of previous length %d",
            distance,
            REVISION_WARN_FRACTION * 100,
            len(prev_text),
        )


# --- condensation -----------------------------------------------------------------


def _clauses(text: str) -> List[str]:
    parts = [part.strip() for part in text.replace("\n", " ").split(".")]
    return [_strip_leading_connective(part) for part in parts if part]


def _strip_leading_connective(clause: str) -> str:
    # Revisions often open follow-up sentences with their own connective;
    # dropping it here keeps the condensed joins from stuttering.
    lowered = clause.lower()
    for connective in CONNECTIVES:
        prefix = connective + " "
        if lowered.startswith(prefix):
            return clause[len(prefix):]
    return clause


def condense(
    narratives: Sequence[EventNarrative],
    limit: int = DEFAULT_TOKEN_BUDGET,
    negative_lexicon: Optional[Sequence[str]] = None,
    forbidden: Sequence[str] = (),
) -> PromptPair:
    """Merge event descriptions into one causal positive prompt plus the
    negative prompt; over budget, clauses drop from the least-changed events."""
    if not narratives:
        raise ValueError("condense requires at least one narrative")
    order = sorted(narratives, key=lambda n: n.t_index)

    seen = set()
    per_event: List[Tuple[EventNarrative, List[str]]] = []
    for narrative in order:
        unique = []
        for clause in _clauses(narrative.text):
            if clause not in seen:
                seen.add(clause)
                unique.append(clause)
        per_event.append((narrative, unique))

    def assemble(selected: Sequence[Tuple[EventNarrative, List[str]]]):
        pieces: List[str] = []
        used: List[str] = []
        contributing = [item for item in selected if item[1]]
        for position, (narrative, clauses) in enumerate(contributing):
            body = ", and ".join(clauses)
            if position == 0:
                pieces.append(body)
            else:
                connective = CONNECTIVES[(position - 1) % len(CONNECTIVES)]
                used.append(connective)
                pieces.append(f"{connective} {body}")
        return ", ".join(pieces) + ".", used

    active = list(per_event)
    positive, used = assemble(active)
    while _token_estimate(positive) > limit and len(active) > 1:
        # Drop the least-changed later event first; the first event is pinned.
        droppable = sorted(
            active[1:],
            key=lambda item: (sum(e - s for s, e in item[0].changed_spans), item[0].t_index),
        )
        victim = droppable[0]
        active = [item for item in active if item is not victim]
        positive, used = assemble(active)
    estimate = _token_estimate(positive)
    if estimate > limit:
        raise BudgetError(
            f"first event's clause alone estimates {estimate} tokens over limit {limit}"
        )

    lexicon = list(negative_lexicon) if negative_lexicon is not None else load_negative_lexicon()
    negative_terms = lexicon + [w for w in forbidden if w not in lexicon]
    negative = ", ".join(negative_terms)
    return PromptPair(
        positive=positive,
        negative=negative,
        connectives_used=tuple(used),
        token_estimate=estimate,
    )


def _token_estimate(text: str) -> int:
    return len(text.split())


def embed_pair(pair: PromptPair, encoder) -> PromptEmbedding:
    """Encode both prompts; concatenation order is fixed [positive; negative]."""
    dim = encoder.dim
    positive_vec = np.asarray(encoder.encode_text(pair.positive), dtype=np.float64)
    negative_text = pair.negative if pair.negative else " "
    negative_vec = np.asarray(encoder.encode_text(negative_text), dtype=np.float64)
    for name, vec in (("positive", positive_vec), ("negative", negative_vec)):
        if vec.shape != (dim,):
            raise DimensionMismatchError(
                f"{name} embedding has shape {vec.shape}, encoder declared dim {dim}"
            )
    return PromptEmbedding(positive_vec=positive_vec, negative_vec=negative_vec)
