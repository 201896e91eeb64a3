"""Row filter expressions.

A filter is a boolean expression over column references and literals::

    round-A_Alice_evaluation != round-A_Bob_evaluation
    (round-B_s1_score > 3) and (round-B_s2_score > 3)
    not kind == "review" or year >= 2020

Grammar (``not`` binds tighter than ``and``, which binds tighter than ``or``;
comparisons do not chain)::

    expr    := or
    or      := and ("or" and)*
    and     := unary ("and" unary)*
    unary   := "not" unary | cmp
    cmp     := operand OP operand | "(" expr ")"
    operand := COLUMN | STRING | NUMBER

Bare tokens made of ``[A-Za-z0-9_.-]`` are column references unless they read as
a decimal number. Cells are strings; when both sides of a comparison parse as
decimals the comparison is numeric, otherwise only ``==`` and ``!=`` are
allowed and compare exact strings. A null cell makes every comparison false.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from dataclasses import dataclass
from decimal import Decimal
from typing import Union

from .errors import FilterSyntaxError, FilterTypeError, UnknownColumnError

COMPARISON_OPS = ("==", "!=", "<=", ">=", "<", ">")
KEYWORDS = ("and", "or", "not")

_WORD_CHARS = re.compile(r"[A-Za-z0-9_.\-]+")
_NUMBER_LITERAL = re.compile(r"^-?(?:\d+(?:\.\d+)?|\.\d+)$")
_DECIMAL_CELL = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$")
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r"}


@dataclass(frozen=True)
class Column:
    name: str


@dataclass(frozen=True)
class String:
    value: str


@dataclass(frozen=True)
class Number:
    text: str


Operand = Union[Column, String, Number]


@dataclass(frozen=True)
class Compare:
    op: str
    left: Operand
    right: Operand


@dataclass(frozen=True)
class Not:
    operand: FilterExpr


@dataclass(frozen=True)
class And:
    operands: tuple[FilterExpr, ...]


@dataclass(frozen=True)
class Or:
    operands: tuple[FilterExpr, ...]


FilterExpr = Union[Compare, Not, And, Or]


@dataclass(frozen=True)
class _Token:
    kind: str  # "op", "lparen", "rparen", "kw", "word", "string", "eof"
    text: str
    pos: int
    value: str = ""


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        pos = i + 1
        if ch.isspace():
            i += 1
        elif ch == "(":
            tokens.append(_Token("lparen", ch, pos))
            i += 1
        elif ch == ")":
            tokens.append(_Token("rparen", ch, pos))
            i += 1
        elif ch in "=!<>":
            two = source[i : i + 2]
            if two in ("==", "!=", "<=", ">="):
                tokens.append(_Token("op", two, pos))
                i += 2
            elif ch in "<>":
                tokens.append(_Token("op", ch, pos))
                i += 1
            else:
                raise FilterSyntaxError(f"unexpected character {ch!r}", pos)
        elif ch in "\"'":
            quote, j, chars = ch, i + 1, []
            while True:
                if j >= n:
                    raise FilterSyntaxError("unterminated string", pos)
                c = source[j]
                if c == "\\":
                    if j + 1 >= n:
                        raise FilterSyntaxError("unterminated string", pos)
                    nxt = source[j + 1]
                    chars.append(_ESCAPES.get(nxt, nxt))
                    j += 2
                elif c == quote:
                    break
                else:
                    chars.append(c)
                    j += 1
            tokens.append(_Token("string", source[i : j + 1], pos, "".join(chars)))
            i = j + 1
        else:
            m = _WORD_CHARS.match(source, i)
            if not m:
                raise FilterSyntaxError(f"unexpected character {ch!r}", pos)
            word = m.group()
            tokens.append(_Token("kw" if word in KEYWORDS else "word", word, pos))
            i = m.end()
    tokens.append(_Token("eof", "", n + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _fail(self, expected: str) -> FilterSyntaxError:
        tok = self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return FilterSyntaxError(f"expected {expected}, found {found}", tok.pos)

    def _keyword(self, word: str) -> bool:
        if self.tok.kind == "kw" and self.tok.text == word:
            self.i += 1
            return True
        return False

    def parse(self) -> FilterExpr:
        expr = self.parse_or()
        if self.tok.kind != "eof":
            raise self._fail("'and', 'or' or end of input")
        return expr

    def parse_or(self) -> FilterExpr:
        items = [self.parse_and()]
        while self._keyword("or"):
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self) -> FilterExpr:
        items = [self.parse_unary()]
        while self._keyword("and"):
            items.append(self.parse_unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_unary(self) -> FilterExpr:
        if self._keyword("not"):
            return Not(self.parse_unary())
        return self.parse_cmp()

    def parse_cmp(self) -> FilterExpr:
        if self.tok.kind == "lparen":
            self.i += 1
            expr = self.parse_or()
            if self.tok.kind != "rparen":
                raise self._fail("')'")
            self.i += 1
            return expr
        left = self.parse_operand()
        if self.tok.kind != "op":
            raise self._fail("comparison operator")
        op = self.tok.text
        self.i += 1
        right = self.parse_operand()
        return Compare(op, left, right)

    def parse_operand(self) -> Operand:
        tok = self.tok
        if tok.kind == "string":
            self.i += 1
            return String(tok.value)
        if tok.kind == "word":
            self.i += 1
            if _NUMBER_LITERAL.match(tok.text):
                return Number(tok.text)
            return Column(tok.text)
        raise self._fail("column, string or number")


def parse_filter(source: str) -> FilterExpr:
    """Parse filter source text.

    Raises:
        FilterSyntaxError: with the 1-based position of the offending token.
    """
    if not source or not source.strip():
        raise FilterSyntaxError("empty filter", 1)
    tokens = _tokenize(source)
    try:
        return _Parser(tokens).parse()
    except RecursionError:
        raise FilterSyntaxError("expression nested too deeply", 1) from None


def _quote(value: str) -> str:
    escaped = (
        value.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\t", "\\t")
        .replace("\r", "\\r")
    )
    return f'"{escaped}"'


def _operand_source(operand: Operand) -> str:
    if isinstance(operand, Column):
        return operand.name
    if isinstance(operand, Number):
        return operand.text
    return _quote(operand.value)


def to_source(expr: FilterExpr) -> str:
    """Render ``expr`` so that ``parse_filter(to_source(e)) == e``."""
    if isinstance(expr, Compare):
        return f"{_operand_source(expr.left)} {expr.op} {_operand_source(expr.right)}"
    if isinstance(expr, Not):
        inner = to_source(expr.operand)
        if isinstance(expr.operand, (And, Or)):
            inner = f"({inner})"
        return f"not {inner}"
    if isinstance(expr, And):
        parts = [
            f"({to_source(e)})" if isinstance(e, (And, Or)) else to_source(e) for e in expr.operands
        ]
        return " and ".join(parts)
    if isinstance(expr, Or):
        parts = [f"({to_source(e)})" if isinstance(e, Or) else to_source(e) for e in expr.operands]
        return " or ".join(parts)
    raise TypeError(f"not a filter expression: {expr!r}")


def referenced_columns(expr: FilterExpr) -> list[str]:
    """Column names in order of first appearance."""
    out: list[str] = []

    def visit(e) -> None:
        if isinstance(e, Column):
            if e.name not in out:
                out.append(e.name)
        elif isinstance(e, Compare):
            visit(e.left)
            visit(e.right)
        elif isinstance(e, Not):
            visit(e.operand)
        elif isinstance(e, (And, Or)):
            for item in e.operands:
                visit(item)

    visit(expr)
    return out


def parse_decimal(value: str) -> Decimal | None:
    """Decimal value of a cell, or None when it does not read as a finite number."""
    if _DECIMAL_CELL.match(value):
        return Decimal(value)
    return None


def _resolve(operand: Operand, row: Mapping[str, str | None]) -> str | None:
    if isinstance(operand, Column):
        if operand.name not in row:
            raise UnknownColumnError(f"unknown column {operand.name!r}")
        return row[operand.name]
    if isinstance(operand, Number):
        return operand.text
    return operand.value


def _compare(op: str, left: str | None, right: str | None) -> bool:
    if left is None or right is None:
        return False
    a, b = parse_decimal(left), parse_decimal(right)
    if a is not None and b is not None:
        lhs, rhs = a, b
    elif op in ("==", "!="):
        lhs, rhs = left, right
    else:
        raise FilterTypeError(f"cannot order non-numeric values {left!r} {op} {right!r}")
    if op == "==":
        return lhs == rhs
    if op == "!=":
        return lhs != rhs
    if op == "<":
        return lhs < rhs
    if op == "<=":
        return lhs <= rhs
    if op == ">":
        return lhs > rhs
    return lhs >= rhs


def eval_filter(expr: FilterExpr, row: Mapping[str, str | None]) -> bool:
    """Evaluate ``expr`` against one row of cells.

    ``and``/``or`` short-circuit, so a type error in an operand that is never
    reached does not surface.
    """
    if isinstance(expr, Compare):
        left = _resolve(expr.left, row)
        right = _resolve(expr.right, row)
        return _compare(expr.op, left, right)
    if isinstance(expr, Not):
        return not eval_filter(expr.operand, row)
    if isinstance(expr, And):
        return all(eval_filter(e, row) for e in expr.operands)
    if isinstance(expr, Or):
        return any(eval_filter(e, row) for e in expr.operands)
    raise TypeError(f"not a filter expression: {expr!r}")
