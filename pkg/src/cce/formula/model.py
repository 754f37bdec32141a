"""Formula and physical-law domain types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from ..dimension import Dimension, Quantity
from ..errors import DimensionError, MissingBindingError
from .expr import Comparison, Const, Expr, BinOp, Func, MinMax, Piecewise, Pow, Var

LAW_DOMAINS = ("mechanics", "optics", "thermal", "material")


@dataclass(frozen=True)
class PhysicalLaw:
    """One entry of the law taxonomy used for question-answering and filtering."""

    id: str
    domain: str
    name: str
    description: str

    def __post_init__(self):
        if self.domain not in LAW_DOMAINS:
            raise ValueError(f"unknown law domain {self.domain!r}")


@dataclass(frozen=True)
class VarDecl:
    """Declared formula variable: dimension, optional SI default, display unit."""

    symbol: str
    dimension: Dimension
    description: str = ""
    default: Optional[Quantity] = None
    unit_label: str = ""


@dataclass(frozen=True)
class Formula:
    """A named, law-tagged equation with a parsed, dimension-checked expression."""

    id: str
    name: str
    aliases: Tuple[str, ...]
    law_tags: Tuple[str, ...]
    target: str
    expr: Expr
    variables: Tuple[VarDecl, ...]
    description: str = ""
    # symbol this formula is the time-derivative of; drives Euler update rules
    rate_of: Optional[str] = None

    def decl(self, symbol: str) -> VarDecl:
        for d in self.variables:
            if d.symbol == symbol:
                return d
        raise KeyError(symbol)

    @property
    def free_variables(self) -> Tuple[str, ...]:
        free = self.expr.free_symbols()
        return tuple(d.symbol for d in self.variables if d.symbol in free)

    @property
    def target_dimension(self) -> Dimension:
        return self.decl(self.target).dimension

    def evaluate(self, bindings: Dict[str, Quantity]) -> Quantity:
        """Evaluate the target quantity. Pure; defaults fill absent bindings."""
        effective: Dict[str, Quantity] = {}
        missing = []
        for decl in self.variables:
            if decl.symbol == self.target:
                continue
            if decl.symbol in bindings:
                effective[decl.symbol] = bindings[decl.symbol]
            elif decl.default is not None:
                effective[decl.symbol] = decl.default
        for symbol in self.free_variables:
            if symbol not in effective:
                missing.append(symbol)
        if missing:
            raise MissingBindingError(
                f"{self.name}: unbound variables {', '.join(sorted(missing))}"
            )
        for symbol, value in effective.items():
            declared = self.decl(symbol).dimension
            if value.dimension != declared:
                raise DimensionError(
                    f"{self.name}: {symbol} bound as {value.dimension}, "
                    f"declared {declared}"
                )
        result = self.expr.evaluate(effective)
        target_decl = self.decl(self.target)
        if result.dimension != target_decl.dimension:
            raise DimensionError(
                f"{self.name}: result dimension {result.dimension} differs "
                f"from declared {target_decl.dimension}"
            )
        return Quantity(result.value, result.dimension, target_decl.unit_label)

    def to_dsl(self) -> str:
        """Canonical DSL rendering; reparses to a structurally identical formula."""
        parts = [self.name]
        if self.aliases:
            parts.append("[" + ", ".join(self.aliases) + "]")
        if self.law_tags:
            parts.append("[" + ", ".join(self.law_tags) + "]")
        parts.append(f": {self.target} = {self.expr.to_dsl()} ;")
        decls = []
        for d in self.variables:
            label = d.unit_label if d.unit_label else str(d.dimension)
            text = f"{d.symbol}:{label}"
            if d.default is not None:
                text += f"={repr(d.default.value)}"
            decls.append(text)
        parts.append(" ".join(decls))
        return " ".join(parts)

    def structurally_equal(self, other: "Formula") -> bool:
        """Semantic identity: unit display labels are ignored, SI content compared."""
        if (
            self.name != other.name
            or self.aliases != other.aliases
            or self.law_tags != other.law_tags
            or self.target != other.target
            or len(self.variables) != len(other.variables)
        ):
            return False
        for a, b in zip(self.variables, other.variables):
            if a.symbol != b.symbol or a.dimension != b.dimension:
                return False
            if (a.default is None) != (b.default is None):
                return False
            if a.default is not None and (
                a.default.value != b.default.value
                or a.default.dimension != b.default.dimension
            ):
                return False
        return expr_equal(self.expr, other.expr)


def expr_equal(a: Expr, b: Expr) -> bool:
    """Structural expression equality; constants compared by value and dimension."""
    if type(a) is not type(b):
        return False
    if isinstance(a, Var):
        return a.symbol == b.symbol
    if isinstance(a, Const):
        return a.quantity.value == b.quantity.value and a.quantity.dimension == b.quantity.dimension
    if isinstance(a, BinOp):
        return a.op == b.op and expr_equal(a.left, b.left) and expr_equal(a.right, b.right)
    if isinstance(a, Pow):
        return a.exponent == b.exponent and expr_equal(a.base, b.base)
    if isinstance(a, Func):
        return a.name == b.name and expr_equal(a.arg, b.arg)
    if isinstance(a, MinMax):
        return a.name == b.name and expr_equal(a.left, b.left) and expr_equal(a.right, b.right)
    if isinstance(a, Piecewise):
        return (
            _cmp_equal(a.condition, b.condition)
            and expr_equal(a.then, b.then)
            and expr_equal(a.otherwise, b.otherwise)
        )
    return False


def _cmp_equal(a: Comparison, b: Comparison) -> bool:
    return a.op == b.op and expr_equal(a.left, b.left) and expr_equal(a.right, b.right)
