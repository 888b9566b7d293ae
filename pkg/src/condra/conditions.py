"""Boolean condition language over categorical attributes.

Grammar (keywords case-insensitive):

    expr  := or
    or    := and (OR and)*
    and   := unary (AND unary)*
    unary := [NOT] (term | "(" expr ")")
    term  := ident "=" quoted-string | ALL

NOT is restricted to a single term or a disjunction of terms over one
attribute, so that a complement can always be resolved as a finite union of
per-value sets.  Values are double-quoted with backslash escapes for the
quote and the backslash itself.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .bitset import IdSet
from .corpus import Corpus
from .errors import BindError, ConditionSyntaxError

_IDENT_RE = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*")
_KEYWORDS = {"AND", "OR", "NOT", "ALL"}


class ConditionExpr:
    """Base class for parsed condition nodes."""

    def canonical(self) -> str:
        raise NotImplementedError

    def attributes(self) -> set[str]:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.canonical()!r})"

    def __eq__(self, other):
        return type(self) is type(other) and self.canonical() == other.canonical()

    def __hash__(self):
        return hash((type(self), self.canonical()))


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


@dataclass(frozen=True, eq=False)
class Term(ConditionExpr):
    attribute: str
    value: str

    def canonical(self) -> str:
        return f"{self.attribute}={_quote(self.value)}"

    def attributes(self) -> set[str]:
        return {self.attribute}


@dataclass(frozen=True, eq=False)
class All(ConditionExpr):
    def canonical(self) -> str:
        return "all"

    def attributes(self) -> set[str]:
        return set()


@dataclass(frozen=True, eq=False)
class And(ConditionExpr):
    parts: tuple[ConditionExpr, ...]

    def canonical(self) -> str:
        rendered = sorted(_paren_if(p, (Or,)) for p in self.parts)
        return " and ".join(rendered)

    def attributes(self) -> set[str]:
        return set().union(*(p.attributes() for p in self.parts))


@dataclass(frozen=True, eq=False)
class Or(ConditionExpr):
    parts: tuple[ConditionExpr, ...]

    def canonical(self) -> str:
        rendered = sorted(p.canonical() for p in self.parts)
        return " or ".join(rendered)

    def attributes(self) -> set[str]:
        return set().union(*(p.attributes() for p in self.parts))


@dataclass(frozen=True, eq=False)
class Not(ConditionExpr):
    child: ConditionExpr

    def canonical(self) -> str:
        return "not " + _paren_if(self.child, (Or, And))

    def attributes(self) -> set[str]:
        return self.child.attributes()


def _paren_if(expr: ConditionExpr, kinds) -> str:
    text = expr.canonical()
    return f"({text})" if isinstance(expr, kinds) else text


def negated_terms(expr: Not) -> tuple[str, list[str]]:
    """The attribute and excluded values of a (restricted) NOT node."""
    child = expr.child
    if isinstance(child, Term):
        return child.attribute, [child.value]
    assert isinstance(child, Or)
    attr = child.parts[0].attribute  # type: ignore[union-attr]
    return attr, [t.value for t in child.parts]  # type: ignore[union-attr]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> tuple[str, str, int]:
        saved = self.pos
        tok = self.next()
        self.pos = saved
        return tok

    def next(self) -> tuple[str, str, int]:
        self._skip_ws()
        start = self.pos
        if self.pos >= len(self.text):
            return ("EOF", "", start)
        ch = self.text[self.pos]
        if ch == "(":
            self.pos += 1
            return ("LPAREN", ch, start)
        if ch == ")":
            self.pos += 1
            return ("RPAREN", ch, start)
        if ch == "=":
            self.pos += 1
            return ("EQ", ch, start)
        if ch == '"':
            return self._string(start)
        m = _IDENT_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            word = m.group(0)
            if word.upper() in _KEYWORDS:
                return (word.upper(), word, start)
            return ("IDENT", word, start)
        raise ConditionSyntaxError(f"unexpected character {ch!r}", start)

    def _string(self, start: int) -> tuple[str, str, int]:
        i = start + 1
        out: list[str] = []
        while i < len(self.text):
            ch = self.text[i]
            if ch == "\\":
                if i + 1 >= len(self.text):
                    raise ConditionSyntaxError("dangling escape in string", i)
                nxt = self.text[i + 1]
                if nxt not in ('"', "\\"):
                    raise ConditionSyntaxError(f"unsupported escape \\{nxt}", i)
                out.append(nxt)
                i += 2
            elif ch == '"':
                self.pos = i + 1
                return ("STRING", "".join(out), start)
            else:
                out.append(ch)
                i += 1
        raise ConditionSyntaxError("unterminated string", start)


def parse_condition(text: str) -> ConditionExpr:
    """Parse condition text into an expression tree."""
    tok = _Tokenizer(text)
    expr = _parse_or(tok)
    kind, value, pos = tok.next()
    if kind != "EOF":
        raise ConditionSyntaxError(f"unexpected {value!r} after expression", pos)
    return expr


def _flattened(parts: list[ConditionExpr], kind) -> list[ConditionExpr]:
    # AND/OR are associative; keeping them flat makes canonical text a
    # fixed point under re-parsing.
    out: list[ConditionExpr] = []
    for p in parts:
        out.extend(p.parts) if isinstance(p, kind) else out.append(p)
    return out


def _parse_or(tok: _Tokenizer) -> ConditionExpr:
    parts = [_parse_and(tok)]
    while tok.peek()[0] == "OR":
        tok.next()
        parts.append(_parse_and(tok))
    if len(parts) == 1:
        return parts[0]
    return Or(tuple(_flattened(parts, Or)))


def _parse_and(tok: _Tokenizer) -> ConditionExpr:
    parts = [_parse_unary(tok)]
    while tok.peek()[0] == "AND":
        tok.next()
        parts.append(_parse_unary(tok))
    if len(parts) == 1:
        return parts[0]
    return And(tuple(_flattened(parts, And)))


def _parse_unary(tok: _Tokenizer) -> ConditionExpr:
    kind, _, pos = tok.peek()
    if kind == "NOT":
        tok.next()
        child = _parse_atom(tok)
        _check_not_target(child, pos)
        return Not(child)
    return _parse_atom(tok)


def _parse_atom(tok: _Tokenizer) -> ConditionExpr:
    kind, value, pos = tok.next()
    if kind == "LPAREN":
        inner = _parse_or(tok)
        kind, value, pos = tok.next()
        if kind != "RPAREN":
            raise ConditionSyntaxError("expected ')'", pos)
        return inner
    if kind == "ALL":
        return All()
    if kind == "IDENT":
        eq_kind, _, eq_pos = tok.next()
        if eq_kind != "EQ":
            raise ConditionSyntaxError("expected '=' after attribute name", eq_pos)
        s_kind, s_value, s_pos = tok.next()
        if s_kind != "STRING":
            raise ConditionSyntaxError("expected quoted value", s_pos)
        return Term(value, s_value)
    raise ConditionSyntaxError(f"expected a term, ALL or '(', got {value!r}", pos)


def _check_not_target(child: ConditionExpr, pos: int) -> None:
    if isinstance(child, Term):
        return
    if isinstance(child, Or) and all(isinstance(p, Term) for p in child.parts):
        attrs = {p.attribute for p in child.parts}  # type: ignore[union-attr]
        if len(attrs) == 1:
            return
        raise ConditionSyntaxError(
            "NOT of a disjunction requires all terms over one attribute", pos
        )
    raise ConditionSyntaxError(
        "NOT applies only to a term or a disjunction of terms over one attribute", pos
    )


# ---------------------------------------------------------------------------
# Binding and evaluation
# ---------------------------------------------------------------------------


def bind_condition(expr: ConditionExpr, corpus: Corpus) -> None:
    """Check every attribute the expression names exists in the corpus."""
    missing = expr.attributes() - set(corpus.attributes)
    if missing:
        raise BindError(f"unknown attribute(s): {', '.join(sorted(missing))}")


def _member_mask(expr: ConditionExpr, corpus: Corpus) -> np.ndarray:
    if isinstance(expr, All):
        return np.ones(corpus.n, dtype=bool)
    if isinstance(expr, Term):
        if expr.attribute not in corpus.metadata:
            raise BindError(f"unknown attribute(s): {expr.attribute}")
        return corpus.metadata[expr.attribute] == expr.value
    if isinstance(expr, And):
        mask = _member_mask(expr.parts[0], corpus)
        for part in expr.parts[1:]:
            mask = mask & _member_mask(part, corpus)
        return mask
    if isinstance(expr, Or):
        mask = _member_mask(expr.parts[0], corpus)
        for part in expr.parts[1:]:
            mask = mask | _member_mask(part, corpus)
        return mask
    if isinstance(expr, Not):
        # Every point carries a value for every attribute, so the
        # within-attribute complement equals the full complement.
        return ~_member_mask(expr.child, corpus)
    raise TypeError(f"unknown expression node {type(expr).__name__}")


def condition_members(expr: ConditionExpr, corpus: Corpus) -> IdSet:
    """The set of point ids satisfying the condition."""
    bind_condition(expr, corpus)
    return IdSet.from_bools(_member_mask(expr, corpus))
