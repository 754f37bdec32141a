"""Formula knowledge base: curated offline storage, ranking, and fallback.

Ranking mixes two desk-verifiable terms at equal weight: normalized token
overlap between the query and the formula's name/aliases, and cosine
similarity of raw character-trigram count vectors over name+description.
Both terms live in [0, 1], depend only on the (query, formula) pair, and
are therefore stable when the knowledge base grows.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..errors import (
    BackendError,
    ConfigError,
    EmptyKnowledgeBaseError,
    FallbackExhaustedError,
)
from .model import Formula, PhysicalLaw
from .parser import parse_formula

DEFAULT_MATCH_THRESHOLD = 0.35
DEFAULT_MAX_FALLBACK_ROUNDS = 2
DEFAULT_TOP_K = 3

_WORD = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> set:
    return set(_WORD.findall(text.lower()))


def _trigrams(text: str) -> Counter:
    s = re.sub(r"\s+", " ", text.lower()).strip()
    if not s:
        return Counter()
    if len(s) < 3:
        return Counter([s])
    return Counter(s[i : i + 3] for i in range(len(s) - 2))


def _cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(count * b[gram] for gram, count in a.items())
    if dot == 0:
        return 0.0
    norm_a = math.sqrt(sum(c * c for c in a.values()))
    norm_b = math.sqrt(sum(c * c for c in b.values()))
    return dot / (norm_a * norm_b)


def name_overlap(query_names: Sequence[str], formula: Formula) -> float:
    """Fraction of query tokens found among the formula's name and aliases."""
    query_tokens = set()
    for q in query_names:
        query_tokens |= _tokens(q)
    if not query_tokens:
        return 0.0
    doc_tokens = _tokens(formula.name)
    for alias in formula.aliases:
        doc_tokens |= _tokens(alias)
    return len(query_tokens & doc_tokens) / len(query_tokens)


def trigram_similarity(query_names: Sequence[str], formula: Formula) -> float:
    """Cosine over character-trigram count vectors of query vs name+description."""
    query = " ".join(query_names)
    document = f"{formula.name} {formula.description}".strip()
    return _cosine(_trigrams(query), _trigrams(document))


def score_formula(query_names: Sequence[str], formula: Formula) -> float:
    return 0.5 * name_overlap(query_names, formula) + 0.5 * trigram_similarity(
        query_names, formula
    )


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked candidates plus a flag telling the caller to consider fallback."""

    ranked: Tuple[Tuple[Formula, float], ...]
    below_threshold: bool

    @property
    def formulas(self) -> Tuple[Formula, ...]:
        return tuple(f for f, _ in self.ranked)

    @property
    def best_score(self) -> float:
        return self.ranked[0][1] if self.ranked else 0.0


@dataclass
class FallbackBudget:
    """Per-run counter bounding formula-name regeneration rounds."""

    max_rounds: int = DEFAULT_MAX_FALLBACK_ROUNDS
    used: int = 0

    @property
    def exhausted(self) -> bool:
        return self.used >= self.max_rounds


class KnowledgeBase:
    """Immutable-after-load store of laws and formulas; safe to share."""

    def __init__(
        self,
        laws: Iterable[PhysicalLaw],
        formulas: Iterable[Formula],
        match_threshold: float = DEFAULT_MATCH_THRESHOLD,
    ):
        self.laws: Dict[str, PhysicalLaw] = {}
        for law in laws:
            if law.id in self.laws:
                raise ConfigError(f"duplicate law id {law.id!r}")
            self.laws[law.id] = law
        self.formulas: Dict[str, Formula] = {}
        for formula in formulas:
            if formula.id in self.formulas:
                raise ConfigError(f"duplicate formula id {formula.id!r}")
            for tag in formula.law_tags:
                if tag not in self.laws:
                    raise ConfigError(
                        f"formula {formula.id!r} tagged with unknown law {tag!r}"
                    )
            self.formulas[formula.id] = formula
        self.match_threshold = match_threshold

    # --- lookup -------------------------------------------------------------

    def law(self, law_id: str) -> PhysicalLaw:
        return self.laws[law_id]

    def formulas_for_law(self, law: PhysicalLaw) -> List[Formula]:
        return [
            f
            for f in sorted(self.formulas.values(), key=lambda f: f.id)
            if law.id in f.law_tags
        ]

    # --- retrieval ------------------------------------------------------------

    def retrieve_topk(
        self, query_names: Sequence[str], law: PhysicalLaw, k: int = DEFAULT_TOP_K
    ) -> RetrievalResult:
        """Rank the law's formulas by score, descending; ties break on id."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not self.formulas:
            raise EmptyKnowledgeBaseError("knowledge base has no formulas")
        candidates = self.formulas_for_law(law)
        scored = sorted(
            ((f, score_formula(query_names, f)) for f in candidates),
            key=lambda pair: (-pair[1], pair[0].id),
        )
        top = tuple(scored[:k])
        below = not top or top[0][1] < self.match_threshold
        return RetrievalResult(ranked=top, below_threshold=below)

    def retrieval_fallback(
        self,
        law: PhysicalLaw,
        candidates: Sequence[Formula],
        reasoner,
        budget: Optional[FallbackBudget] = None,
    ) -> List[str]:
        """Regenerate query names from the law's candidate formulas via the backend."""
        if budget is None:
            budget = FallbackBudget()
        if not candidates:
            raise FallbackExhaustedError(
                f"no candidate formulas for law {law.id!r} to regenerate from"
            )
        if budget.exhausted:
            raise FallbackExhaustedError(
                f"formula-name fallback exhausted after {budget.used} rounds"
            )
        budget.used += 1
        from ..backends.schemas import FORMULA_NAMES_SCHEMA

        try:
            response = reasoner.reason(
                {
                    "kind": "regenerate_formula_names",
                    "payload": {
                        "law": law.id,
                        "law_name": law.name,
                        "candidates": [f.name for f in candidates],
                    },
                },
                FORMULA_NAMES_SCHEMA,
            )
        except BackendError as exc:
            raise BackendError(
                f"fallback round {budget.used}: {exc}", attempts=exc.attempts
            ) from exc
        return [str(n) for n in response["names"]]


# --- loading ------------------------------------------------------------------


def load_laws(records: Iterable[dict]) -> List[PhysicalLaw]:
    return [
        PhysicalLaw(
            id=r["id"], domain=r["domain"], name=r["name"], description=r.get("description", "")
        )
        for r in records
    ]


def load_formulas(records: Iterable[dict]) -> List[Formula]:
    """Load KB records `{id, name, aliases, laws, dsl}`; extra fields optional."""
    formulas = []
    seen = set()
    for record in records:
        rid = record["id"]
        if rid in seen:
            raise ConfigError(f"duplicate formula id {rid!r} in KB file")
        seen.add(rid)
        formula = parse_formula(
            record["dsl"],
            formula_id=rid,
            description=record.get("description", ""),
            rate_of=record.get("rate_of"),
        )
        declared_name = record.get("name", formula.name)
        if declared_name != formula.name:
            raise ConfigError(
                f"KB record {rid!r} names {declared_name!r} but DSL names {formula.name!r}"
            )
        aliases = tuple(record.get("aliases", formula.aliases))
        laws = tuple(record.get("laws", formula.law_tags))
        formulas.append(
            Formula(
                id=rid,
                name=formula.name,
                aliases=aliases,
                law_tags=laws,
                target=formula.target,
                expr=formula.expr,
                variables=formula.variables,
                description=record.get("description", ""),
                rate_of=record.get("rate_of"),
            )
        )
    return formulas


def load_kb_files(laws_path=None, formulas_path=None) -> KnowledgeBase:
    """Load the shipped taxonomy and formula bank, or explicit JSON files."""
    if laws_path is None:
        law_records = json.loads(
            resources.files("cce.data").joinpath("laws.json").read_text()
        )
    else:
        with open(laws_path) as fh:
            law_records = json.load(fh)
    if formulas_path is None:
        formula_records = json.loads(
            resources.files("cce.data").joinpath("kb.json").read_text()
        )
    else:
        with open(formulas_path) as fh:
            formula_records = json.load(fh)
    return KnowledgeBase(load_laws(law_records), load_formulas(formula_records))
