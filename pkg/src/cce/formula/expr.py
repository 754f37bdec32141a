"""Expression trees for physics formulas.

Node set: variable, constant, add, sub, mul, div, pow (rational literal
exponent), sqrt, exp, ln, abs, min, max, piecewise(cond, then, else).
Dimensional consistency is established once against a declaration table;
evaluation is pure and reports domain failures instead of returning NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Tuple

from ..dimension import DIMENSIONLESS, Dimension, Quantity
from ..errors import DimensionError, MathDomainError, UnknownSymbolError


class Expr:
    """Base expression node."""

    def free_symbols(self) -> set:
        raise NotImplementedError

    def infer_dimension(self, decls: Dict[str, Dimension]) -> Dimension:
        raise NotImplementedError

    def evaluate(self, bindings: Dict[str, Quantity]) -> Quantity:
        raise NotImplementedError

    def to_dsl(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Var(Expr):
    symbol: str

    def free_symbols(self):
        return {self.symbol}

    def infer_dimension(self, decls):
        if self.symbol not in decls:
            raise UnknownSymbolError(f"undeclared symbol {self.symbol!r}")
        return decls[self.symbol]

    def evaluate(self, bindings):
        if self.symbol not in bindings:
            raise UnknownSymbolError(f"unbound symbol {self.symbol!r}")
        return bindings[self.symbol]

    def to_dsl(self):
        return self.symbol


@dataclass(frozen=True)
class Const(Expr):
    quantity: Quantity

    def free_symbols(self):
        return set()

    def infer_dimension(self, decls):
        return self.quantity.dimension

    def evaluate(self, bindings):
        return self.quantity

    def to_dsl(self):
        v = repr(self.quantity.value)
        if self.quantity.dimension.is_dimensionless:
            return v
        return f"{v}[{self.quantity.unit_label or self.quantity.dimension}]"


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # add | sub | mul | div
    left: Expr
    right: Expr

    _SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}

    def free_symbols(self):
        return self.left.free_symbols() | self.right.free_symbols()

    def infer_dimension(self, decls):
        ld = self.left.infer_dimension(decls)
        rd = self.right.infer_dimension(decls)
        if self.op in ("add", "sub"):
            if ld != rd:
                raise DimensionError(
                    f"cannot {self.op} {ld} and {rd} in '{self.to_dsl()}'"
                )
            return ld
        if self.op == "mul":
            return ld * rd
        return ld / rd

    def evaluate(self, bindings):
        lv = self.left.evaluate(bindings)
        rv = self.right.evaluate(bindings)
        if self.op == "add":
            return lv + rv
        if self.op == "sub":
            return lv - rv
        if self.op == "mul":
            return lv * rv
        if rv.value == 0:
            raise MathDomainError(f"division by zero in '{self.to_dsl()}'")
        return lv / rv

    def to_dsl(self):
        return f"({self.left.to_dsl()} {self._SYMBOLS[self.op]} {self.right.to_dsl()})"


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Fraction  # literal rational, so dimensions stay decidable

    def free_symbols(self):
        return self.base.free_symbols()

    def infer_dimension(self, decls):
        return self.base.infer_dimension(decls) ** self.exponent

    def evaluate(self, bindings):
        bv = self.base.evaluate(bindings)
        e = self.exponent
        if bv.value == 0 and e < 0:
            raise MathDomainError(f"zero raised to negative power in '{self.to_dsl()}'")
        if bv.value < 0 and e.denominator != 1:
            raise MathDomainError(
                f"negative base with fractional exponent in '{self.to_dsl()}'"
            )
        return Quantity(float(bv.value) ** float(e), bv.dimension ** e)

    def to_dsl(self):
        e = self.exponent
        if e.denominator == 1:
            return f"({self.base.to_dsl()} ^ {e.numerator})"
        return f"({self.base.to_dsl()} ^ ({e.numerator}/{e.denominator}))"


@dataclass(frozen=True)
class Func(Expr):
    name: str  # sqrt | exp | ln | abs
    arg: Expr

    def free_symbols(self):
        return self.arg.free_symbols()

    def infer_dimension(self, decls):
        ad = self.arg.infer_dimension(decls)
        if self.name == "sqrt":
            return ad ** Fraction(1, 2)
        if self.name == "abs":
            return ad
        if not ad.is_dimensionless:
            raise DimensionError(f"{self.name}() needs a dimensionless argument, got {ad}")
        return DIMENSIONLESS

    def evaluate(self, bindings):
        av = self.arg.evaluate(bindings)
        if self.name == "sqrt":
            if av.value < 0:
                raise MathDomainError(f"sqrt of negative in '{self.to_dsl()}'")
            return Quantity(math.sqrt(av.value), av.dimension ** Fraction(1, 2))
        if self.name == "abs":
            return Quantity(abs(av.value), av.dimension)
        if self.name == "exp":
            try:
                return Quantity(math.exp(av.value), DIMENSIONLESS)
            except OverflowError:
                return Quantity(math.inf, DIMENSIONLESS)
        if av.value <= 0:
            raise MathDomainError(f"ln of non-positive in '{self.to_dsl()}'")
        return Quantity(math.log(av.value), DIMENSIONLESS)

    def to_dsl(self):
        return f"{self.name}({self.arg.to_dsl()})"


@dataclass(frozen=True)
class MinMax(Expr):
    name: str  # min | max
    left: Expr
    right: Expr

    def free_symbols(self):
        return self.left.free_symbols() | self.right.free_symbols()

    def infer_dimension(self, decls):
        ld = self.left.infer_dimension(decls)
        rd = self.right.infer_dimension(decls)
        if ld != rd:
            raise DimensionError(f"{self.name}() arguments differ: {ld} vs {rd}")
        return ld

    def evaluate(self, bindings):
        lv = self.left.evaluate(bindings)
        rv = self.right.evaluate(bindings)
        if lv.dimension != rv.dimension:
            raise DimensionError(f"{self.name}() arguments differ in dimension")
        pick = min if self.name == "min" else max
        return Quantity(pick(lv.value, rv.value), lv.dimension)

    def to_dsl(self):
        return f"{self.name}({self.left.to_dsl()}, {self.right.to_dsl()})"


@dataclass(frozen=True)
class Comparison:
    op: str  # < | <= | > | >=
    left: Expr
    right: Expr

    def free_symbols(self):
        return self.left.free_symbols() | self.right.free_symbols()

    def check_dimensions(self, decls):
        ld = self.left.infer_dimension(decls)
        rd = self.right.infer_dimension(decls)
        if ld != rd:
            raise DimensionError(f"comparison between {ld} and {rd}")

    def holds(self, bindings) -> bool:
        lv = self.left.evaluate(bindings)
        rv = self.right.evaluate(bindings)
        if lv.dimension != rv.dimension:
            raise DimensionError("comparison between unequal dimensions")
        return {
            "<": lv.value < rv.value,
            "<=": lv.value <= rv.value,
            ">": lv.value > rv.value,
            ">=": lv.value >= rv.value,
        }[self.op]

    def to_dsl(self):
        return f"{self.left.to_dsl()} {self.op} {self.right.to_dsl()}"


@dataclass(frozen=True)
class Piecewise(Expr):
    condition: Comparison
    then: Expr
    otherwise: Expr

    def free_symbols(self):
        return (
            self.condition.free_symbols()
            | self.then.free_symbols()
            | self.otherwise.free_symbols()
        )

    def infer_dimension(self, decls):
        self.condition.check_dimensions(decls)
        td = self.then.infer_dimension(decls)
        od = self.otherwise.infer_dimension(decls)
        if td != od:
            raise DimensionError(f"piecewise branches differ: {td} vs {od}")
        return td

    def evaluate(self, bindings):
        branch = self.then if self.condition.holds(bindings) else self.otherwise
        return branch.evaluate(bindings)

    def to_dsl(self):
        return (
            f"piecewise({self.condition.to_dsl()}, "
            f"{self.then.to_dsl()}, {self.otherwise.to_dsl()})"
        )


def neg(expr: Expr) -> Expr:
    """Unary minus, encoded as (-1 * x) so dimensions pass through."""
    return BinOp("mul", Const(Quantity(-1.0, DIMENSIONLESS)), expr)
