"""Physics formula storage, parsing, evaluation, and retrieval."""

from .expr import BinOp, Comparison, Const, Expr, Func, MinMax, Piecewise, Pow, Var
from .kb import (
    DEFAULT_MATCH_THRESHOLD,
    DEFAULT_MAX_FALLBACK_ROUNDS,
    DEFAULT_TOP_K,
    FallbackBudget,
    KnowledgeBase,
    RetrievalResult,
    load_kb_files,
    name_overlap,
    score_formula,
    trigram_similarity,
)
from .model import Formula, PhysicalLaw, VarDecl, expr_equal
from .parser import parse_expression, parse_formula

__all__ = [
    "BinOp",
    "Comparison",
    "Const",
    "Expr",
    "Func",
    "MinMax",
    "Piecewise",
    "Pow",
    "Var",
    "Formula",
    "PhysicalLaw",
    "VarDecl",
    "expr_equal",
    "parse_expression",
    "parse_formula",
    "KnowledgeBase",
    "RetrievalResult",
    "FallbackBudget",
    "load_kb_files",
    "name_overlap",
    "score_formula",
    "trigram_similarity",
    "DEFAULT_MATCH_THRESHOLD",
    "DEFAULT_MAX_FALLBACK_ROUNDS",
    "DEFAULT_TOP_K",
]
