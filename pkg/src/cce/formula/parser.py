"""Parser for the formula DSL.

Source shape (machine-readable EBNF in docs/formula_dsl.ebnf):

    buoyancy [Archimedes principle] [mech.buoyancy] :
        F_b = rho_f * V * g ; rho_f:kg/m^3 V:m^3 g:m/s^2=9.81 F_b:N

First bracket group lists aliases, second lists law tags; both optional.
Declarations follow the ';' as whitespace-separated `symbol:unit[=default]`
entries. Units are normalized to SI while parsing, so evaluation never
touches conversion factors. The parse is total: any malformed input raises
a structured error, never an unhandled exception.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import List, Optional, Tuple

from ..dimension import DIMENSIONLESS, Quantity, parse_unit
from ..errors import DimensionError, FormulaSyntaxError, UnknownSymbolError, UnknownUnitError
from .expr import BinOp, Comparison, Const, Expr, Func, MinMax, Piecewise, Pow, Var, neg
from .model import Formula, VarDecl

_HEADER = re.compile(
    r"^\s*(?P<name>[A-Za-z_]\w*)\s*"
    r"(?:\[(?P<g1>[^\]]*)\]\s*)?"
    r"(?:\[(?P<g2>[^\]]*)\]\s*)?"
    r":"
)

_TOKEN = re.compile(
    r"\s*(?:(?P<number>\d+\.?\d*(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_]\w*)"
    r"|(?P<op><=|>=|\^|[+\-*/(),<>\[\]]))"
)

_FUNCS = ("sqrt", "exp", "ln", "abs")


class _Token:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind: str, text: str, pos: int):
        self.kind = kind
        self.text = text
        self.pos = pos


def _tokenize(source: str, offset: int) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            rest = source[pos:].lstrip()
            if not rest:
                break
            raise FormulaSyntaxError(
                f"unexpected character {rest[0]!r}", offset + pos
            )
        pos = m.end()
        for kind in ("number", "ident", "op"):
            text = m.group(kind)
            if text is not None:
                tokens.append(_Token(kind, text, offset + m.start(kind)))
                break
    return tokens


class _ExprParser:
    """Precedence-climbing parser over the token stream."""

    def __init__(self, tokens: List[_Token], end_pos: int):
        self.tokens = tokens
        self.i = 0
        self.end_pos = end_pos

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise FormulaSyntaxError("unexpected end of expression", self.end_pos)
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.take()
        if tok.text != text:
            raise FormulaSyntaxError(
                f"unexpected token {tok.text!r}", tok.pos, expected=repr(text)
            )
        return tok

    def parse(self) -> Expr:
        node = self.sum()
        tok = self.peek()
        if tok is not None:
            raise FormulaSyntaxError(f"trailing token {tok.text!r}", tok.pos)
        return node

    def sum(self) -> Expr:
        node = self.term()
        while self.peek() is not None and self.peek().text in ("+", "-"):
            op = self.take().text
            node = BinOp("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek() is not None and self.peek().text in ("*", "/"):
            op = self.take().text
            node = BinOp("mul" if op == "*" else "div", node, self.unary())
        return node

    def unary(self) -> Expr:
        tok = self.peek()
        if tok is not None and tok.text == "-":
            self.take()
            nxt = self.peek()
            if nxt is not None and nxt.kind == "number":
                return self.power(negate_literal=True)
            return neg(self.power())
        return self.power()

    def power(self, negate_literal: bool = False) -> Expr:
        node = self.atom(negate_literal)
        tok = self.peek()
        if tok is not None and tok.text == "^":
            self.take()
            exponent = self.rational()
            node = Pow(node, exponent)
        return node

    def rational(self) -> Fraction:
        tok = self.peek()
        if tok is None:
            raise FormulaSyntaxError("missing exponent", self.end_pos)
        sign = 1
        if tok.text == "-":
            self.take()
            sign = -1
            tok = self.peek()
        if tok is not None and tok.text == "(":
            self.take()
            num = self._int_token()
            self.expect("/")
            den = self._int_token()
            self.expect(")")
            if den == 0:
                raise FormulaSyntaxError("zero denominator in exponent", tok.pos)
            return sign * Fraction(num, den)
        tok = self.take()
        if tok.kind != "number":
            raise FormulaSyntaxError(
                f"exponent must be a rational literal, got {tok.text!r}", tok.pos
            )
        try:
            return sign * Fraction(tok.text)
        except ValueError:
            raise FormulaSyntaxError(f"bad exponent {tok.text!r}", tok.pos)

    def _int_token(self) -> int:
        sign = 1
        tok = self.take()
        if tok.text == "-":
            sign = -1
            tok = self.take()
        if tok.kind != "number" or "." in tok.text or "e" in tok.text.lower():
            raise FormulaSyntaxError(f"expected integer, got {tok.text!r}", tok.pos)
        return sign * int(tok.text)

    def atom(self, negate_literal: bool = False) -> Expr:
        tok = self.take()
        if tok.kind == "number":
            value = float(tok.text)
            if negate_literal:
                value = -value
            nxt = self.peek()
            if nxt is not None and nxt.text == "[":
                unit = self._unit_annotation()
                dim, scale = parse_unit(unit)
                return Const(Quantity(value * scale, dim, unit if scale == 1.0 else str(dim)))
            return Const(Quantity(value, DIMENSIONLESS))
        if tok.text == "(":
            node = self.sum()
            self.expect(")")
            return node
        if tok.kind == "ident":
            name = tok.text
            nxt = self.peek()
            if nxt is not None and nxt.text == "(":
                return self._call(name, tok.pos)
            return Var(name)
        raise FormulaSyntaxError(f"unexpected token {tok.text!r}", tok.pos)

    def _unit_annotation(self) -> str:
        open_tok = self.expect("[")
        parts = []
        while True:
            tok = self.take()
            if tok.text == "]":
                break
            parts.append(tok.text)
        unit = "".join(parts)
        if not unit:
            raise FormulaSyntaxError("empty unit annotation", open_tok.pos)
        return unit

    def _call(self, name: str, pos: int) -> Expr:
        self.expect("(")
        if name in _FUNCS:
            arg = self.sum()
            self.expect(")")
            return Func(name, arg)
        if name in ("min", "max"):
            left = self.sum()
            self.expect(",")
            right = self.sum()
            self.expect(")")
            return MinMax(name, left, right)
        if name == "piecewise":
            cond = self._comparison()
            self.expect(",")
            then = self.sum()
            self.expect(",")
            otherwise = self.sum()
            self.expect(")")
            return Piecewise(cond, then, otherwise)
        raise FormulaSyntaxError(f"unknown function {name!r}", pos)

    def _comparison(self) -> Comparison:
        left = self.sum()
        tok = self.take()
        if tok.text not in ("<", "<=", ">", ">="):
            raise FormulaSyntaxError(
                f"expected comparison operator, got {tok.text!r}", tok.pos
            )
        right = self.sum()
        return Comparison(tok.text, left, right)


def parse_expression(source: str, offset: int = 0) -> Expr:
    """Parse a bare expression string (shared with the update-rule layer)."""
    tokens = _tokenize(source, offset)
    if not tokens:
        raise FormulaSyntaxError("empty expression", offset)
    return _ExprParser(tokens, offset + len(source)).parse()


_DECL = re.compile(r"^([A-Za-z_]\w*):([^\s=]+)(?:=(\S+))?$")


def _parse_decls(source: str, offset: int) -> List[VarDecl]:
    decls: List[VarDecl] = []
    seen = set()
    pos = offset
    for chunk in source.split():
        at = source.find(chunk, pos - offset) + offset
        m = _DECL.match(chunk)
        if m is None:
            raise FormulaSyntaxError(
                f"bad declaration {chunk!r}", at, expected="symbol:unit[=default]"
            )
        symbol, unit, default_text = m.group(1), m.group(2), m.group(3)
        if symbol in seen:
            raise FormulaSyntaxError(f"duplicate declaration of {symbol!r}", at)
        seen.add(symbol)
        try:
            dim, scale = parse_unit(unit)
        except (UnknownUnitError, FormulaSyntaxError) as exc:
            raise FormulaSyntaxError(f"bad unit in {chunk!r}: {exc}", at)
        default = None
        if default_text is not None:
            try:
                default = Quantity(float(default_text) * scale, dim, unit if scale == 1.0 else str(dim))
            except ValueError:
                raise FormulaSyntaxError(f"bad default in {chunk!r}", at)
        decls.append(VarDecl(symbol, dim, "", default, unit))
    if not decls:
        raise FormulaSyntaxError("no variable declarations", offset)
    return decls


def _split_csv(text: Optional[str]) -> Tuple[str, ...]:
    if not text:
        return ()
    return tuple(p.strip() for p in text.split(",") if p.strip())


def parse_formula(
    source: str,
    formula_id: str = "",
    description: str = "",
    rate_of: Optional[str] = None,
) -> Formula:
    """Parse DSL source into a dimension-checked Formula."""
    header = _HEADER.match(source)
    if header is None:
        raise FormulaSyntaxError(
            "bad formula header", 0, expected="name [aliases] [laws] :"
        )
    name = header.group("name")
    aliases = _split_csv(header.group("g1"))
    laws = _split_csv(header.group("g2"))

    body = source[header.end():]
    body_offset = header.end()
    if ";" not in body:
        raise FormulaSyntaxError("missing ';' before declarations", body_offset + len(body))
    eq_part, decl_part = body.split(";", 1)
    if "=" not in eq_part:
        raise FormulaSyntaxError("missing '=' in formula body", body_offset)
    target_part, expr_part = eq_part.split("=", 1)
    target = target_part.strip()
    if not re.fullmatch(r"[A-Za-z_]\w*", target or ""):
        raise FormulaSyntaxError(
            f"bad target symbol {target!r}", body_offset + len(target_part) - len(target_part.lstrip())
        )

    expr_offset = body_offset + len(target_part) + 1
    expr = parse_expression(expr_part, expr_offset)
    decls = _parse_decls(decl_part, body_offset + len(eq_part) + 1)

    decl_map = {d.symbol: d for d in decls}
    if target not in decl_map:
        raise UnknownSymbolError(f"target {target!r} has no declaration")

    free = expr.free_symbols()
    if target in free:
        raise FormulaSyntaxError(
            f"target {target!r} appears in its own expression", expr_offset
        )
    undeclared = sorted(free - set(decl_map))
    if undeclared:
        raise UnknownSymbolError(f"undeclared symbols: {', '.join(undeclared)}")

    dims = {d.symbol: d.dimension for d in decls}
    expr_dim = expr.infer_dimension(dims)
    target_dim = decl_map[target].dimension
    if expr_dim != target_dim:
        raise DimensionError(
            f"expression dimension {expr_dim} does not match "
            f"target {target!r} declared as {target_dim}"
        )

    return Formula(
        id=formula_id or name,
        name=name,
        aliases=aliases,
        law_tags=laws,
        target=target,
        expr=expr,
        variables=tuple(decls),
        description=description,
        rate_of=rate_of,
    )
