"""SI dimensions and dimensioned quantities.

Dimensions are 7-tuples of rational exponents over the SI base quantities
(length, mass, time, current, temperature, amount, luminous intensity).
Rational exponents keep sqrt exact. Quantities store SI-normalized values;
the unit label is kept for display only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from .errors import DimensionError, FormulaSyntaxError, UnknownUnitError

BASE_NAMES = ("length", "mass", "time", "current", "temperature", "amount", "luminosity")
_BASE_SYMBOLS = ("m", "kg", "s", "A", "K", "mol", "cd")


@dataclass(frozen=True)
class Dimension:
    """Exponent vector over the 7 SI base dimensions."""

    exponents: tuple  # 7 Fractions

    def __post_init__(self):
        if len(self.exponents) != 7:
            raise DimensionError(f"expected 7 exponents, got {len(self.exponents)}")
        object.__setattr__(self, "exponents", tuple(Fraction(e) for e in self.exponents))

    @staticmethod
    def of(**kw) -> "Dimension":
        exps = [Fraction(0)] * 7
        for name, val in kw.items():
            if name not in BASE_NAMES:
                raise DimensionError(f"unknown base dimension {name!r}")
            exps[BASE_NAMES.index(name)] = Fraction(val)
        return Dimension(tuple(exps))

    @property
    def is_dimensionless(self) -> bool:
        return all(e == 0 for e in self.exponents)

    def __mul__(self, other: "Dimension") -> "Dimension":
        return Dimension(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    def __truediv__(self, other: "Dimension") -> "Dimension":
        return Dimension(tuple(a - b for a, b in zip(self.exponents, other.exponents)))

    def __pow__(self, exponent: Union[int, Fraction]) -> "Dimension":
        k = Fraction(exponent)
        return Dimension(tuple(a * k for a in self.exponents))

    def __str__(self) -> str:
        parts = []
        for sym, e in zip(_BASE_SYMBOLS, self.exponents):
            if e == 0:
                continue
            parts.append(sym if e == 1 else f"{sym}^{e}")
        return "*".join(parts) if parts else "1"

    def to_json(self) -> list:
        return [str(e) for e in self.exponents]

    @staticmethod
    def from_json(data: list) -> "Dimension":
        return Dimension(tuple(Fraction(e) for e in data))


DIMENSIONLESS = Dimension.of()


@dataclass(frozen=True)
class Quantity:
    """SI-normalized value with its dimension and a display unit label."""

    value: float
    dimension: Dimension
    unit_label: str = ""

    def _require_same_dim(self, other: "Quantity", op: str):
        if self.dimension != other.dimension:
            raise DimensionError(
                f"cannot {op} {self.dimension} and {other.dimension}"
            )

    def __add__(self, other: "Quantity") -> "Quantity":
        self._require_same_dim(other, "add")
        return Quantity(self.value + other.value, self.dimension, self.unit_label)

    def __sub__(self, other: "Quantity") -> "Quantity":
        self._require_same_dim(other, "subtract")
        return Quantity(self.value - other.value, self.dimension, self.unit_label)

    def __mul__(self, other: "Quantity") -> "Quantity":
        return Quantity(self.value * other.value, self.dimension * other.dimension)

    def __truediv__(self, other: "Quantity") -> "Quantity":
        if other.value == 0:
            raise ZeroDivisionError("quantity division by zero")
        return Quantity(self.value / other.value, self.dimension / other.dimension)

    def __neg__(self) -> "Quantity":
        return Quantity(-self.value, self.dimension, self.unit_label)

    def __str__(self) -> str:
        label = self.unit_label or str(self.dimension)
        return f"{self.value:g} {label}".rstrip()

    def to_json(self) -> dict:
        return {"value": self.value, "unit": self.unit_label, "dim": self.dimension.to_json()}

    @staticmethod
    def from_json(data: dict) -> "Quantity":
        return Quantity(float(data["value"]), Dimension.from_json(data["dim"]), data.get("unit", ""))


# --- unit table --------------------------------------------------------------
#
# Each entry: dimension + SI scale factor. degC is affine and therefore only
# legal as a standalone label, never inside a composite unit expression.

def _d(**kw) -> Dimension:
    return Dimension.of(**kw)


_UNITS = {
    # base
    "m": (_d(length=1), 1.0),
    "kg": (_d(mass=1), 1.0),
    "s": (_d(time=1), 1.0),
    "A": (_d(current=1), 1.0),
    "K": (_d(temperature=1), 1.0),
    "mol": (_d(amount=1), 1.0),
    "cd": (_d(luminosity=1), 1.0),
    # dimensionless
    "1": (DIMENSIONLESS, 1.0),
    "rad": (DIMENSIONLESS, 1.0),
    # derived, coherent
    "N": (_d(mass=1, length=1, time=-2), 1.0),
    "Pa": (_d(mass=1, length=-1, time=-2), 1.0),
    "J": (_d(mass=1, length=2, time=-2), 1.0),
    "W": (_d(mass=1, length=2, time=-3), 1.0),
    "Hz": (_d(time=-1), 1.0),
    "C": (_d(current=1, time=1), 1.0),
    "V": (_d(mass=1, length=2, time=-3, current=-1), 1.0),
    "ohm": (_d(mass=1, length=2, time=-3, current=-2), 1.0),
    "T": (_d(mass=1, time=-2, current=-1), 1.0),
    "lm": (_d(luminosity=1), 1.0),
    "lx": (_d(luminosity=1, length=-2), 1.0),
    # scaled
    "g": (_d(mass=1), 1e-3),
    "km": (_d(length=1), 1e3),
    "cm": (_d(length=1), 1e-2),
    "mm": (_d(length=1), 1e-3),
    "L": (_d(length=3), 1e-3),
    "mL": (_d(length=3), 1e-6),
    "min": (_d(time=1), 60.0),
    "h": (_d(time=1), 3600.0),
    "bar": (_d(mass=1, length=-1, time=-2), 1e5),
    "kPa": (_d(mass=1, length=-1, time=-2), 1e3),
    "kJ": (_d(mass=1, length=2, time=-2), 1e3),
    "kN": (_d(mass=1, length=1, time=-2), 1e3),
}

# affine units: (dimension, scale, offset); standalone use only
_AFFINE_UNITS = {
    "degC": (_d(temperature=1), 1.0, 273.15),
}

_UNIT_TOKEN = re.compile(r"[A-Za-z]+|\d+|[*/^()·-]")


class _UnitParser:
    """Recursive-descent parser for composite unit expressions like kg/m^3."""

    def __init__(self, source: str):
        self.source = source
        self.tokens = _UNIT_TOKEN.findall(source)
        if "".join(self.tokens).replace("·", "*") != re.sub(r"\s+", "", source).replace("·", "*"):
            raise FormulaSyntaxError(f"bad unit expression {source!r}")
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def parse(self):
        dim, scale = self.product()
        if self.peek() is not None:
            raise FormulaSyntaxError(f"trailing tokens in unit {self.source!r}")
        return dim, scale

    def product(self):
        dim, scale = self.factor()
        while self.peek() in ("*", "/", "·"):
            op = self.take()
            d2, s2 = self.factor()
            if op == "/":
                dim, scale = dim / d2, scale / s2
            else:
                dim, scale = dim * d2, scale * s2
        return dim, scale

    def factor(self):
        tok = self.take()
        if tok == "(":
            dim, scale = self.product()
            if self.take() != ")":
                raise FormulaSyntaxError(f"unbalanced parens in unit {self.source!r}")
        elif tok is None:
            raise FormulaSyntaxError(f"unexpected end of unit {self.source!r}")
        elif tok == "1":
            dim, scale = DIMENSIONLESS, 1.0
        elif tok in _UNITS:
            dim, scale = _UNITS[tok]
        elif tok in _AFFINE_UNITS:
            raise UnknownUnitError(
                f"affine unit {tok!r} is only valid standalone, not in {self.source!r}"
            )
        else:
            raise UnknownUnitError(f"unknown unit {tok!r} in {self.source!r}")
        if self.peek() == "^":
            self.take()
            exp = self._rational()
            dim = dim ** exp
            scale = scale ** float(exp)
        return dim, scale

    def _rational(self) -> Fraction:
        sign = 1
        if self.peek() == "-":
            self.take()
            sign = -1
        tok = self.take()
        if tok == "(":
            num = self._signed_int()
            if self.take() != "/":
                raise FormulaSyntaxError(f"expected '/' in exponent of {self.source!r}")
            den = self._signed_int()
            if self.take() != ")":
                raise FormulaSyntaxError(f"unbalanced exponent parens in {self.source!r}")
            return sign * Fraction(num, den)
        if tok is None or not tok.isdigit():
            raise FormulaSyntaxError(f"bad exponent in unit {self.source!r}")
        return sign * Fraction(int(tok))

    def _signed_int(self) -> int:
        sign = 1
        if self.peek() == "-":
            self.take()
            sign = -1
        tok = self.take()
        if tok is None or not tok.isdigit():
            raise FormulaSyntaxError(f"bad exponent integer in unit {self.source!r}")
        return sign * int(tok)


def parse_unit(label: str) -> tuple:
    """Parse a unit label into (dimension, SI scale factor). Affine units rejected."""
    label = label.strip()
    if not label:
        raise FormulaSyntaxError("empty unit label")
    if label in _AFFINE_UNITS:
        raise UnknownUnitError(f"affine unit {label!r} needs quantity(); it has an offset")
    return _UnitParser(label).parse()


def quantity(value: float, unit: str) -> Quantity:
    """Build an SI-normalized Quantity from a value expressed in `unit`."""
    unit = unit.strip()
    if unit in _AFFINE_UNITS:
        dim, scale, offset = _AFFINE_UNITS[unit]
        return Quantity(value * scale + offset, dim, "K")
    dim, scale = parse_unit(unit)
    return Quantity(value * scale, dim, unit if scale == 1.0 else _si_label(dim))


def _si_label(dim: Dimension) -> str:
    return str(dim)


def dimension_of(unit: str) -> Dimension:
    """Dimension of a unit label (affine units allowed here)."""
    unit = unit.strip()
    if unit in _AFFINE_UNITS:
        return _AFFINE_UNITS[unit][0]
    return parse_unit(unit)[0]
