"""Finite-trace LTL formulas: AST, parser and printer.

Concrete grammar, loosest binding first::

    impl   := or ('->' impl)?
    or     := and ('|' and)*
    and    := until ('&' until)*
    until  := unary ('U' until)?
    unary  := ('!' | 'F' | 'G') unary | atom | 'true' | 'false' | '(' impl ')'

``F p`` is read as ``true U p`` and ``a -> b`` as ``!a | b``. ``G`` and ``|``
stay first-class nodes.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union


class FormulaSyntaxError(ValueError):
    """Raised for malformed formula text; ``pos`` is the 0-based offset."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class FalseF:
    pass


_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class Atom:
    name: str

    def __post_init__(self):
        if not _IDENT_RE.fullmatch(self.name or "") or self.name in KEYWORDS:
            raise ValueError(f"invalid atom name {self.name!r}")


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Or:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Until:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Eventually:
    arg: "Formula"


@dataclass(frozen=True)
class Always:
    arg: "Formula"


Formula = Union[TrueF, FalseF, Atom, Not, And, Or, Until, Eventually, Always]

TRUE = TrueF()
FALSE = FalseF()

KEYWORDS = frozenset({"U", "F", "G", "true", "false"})

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<op>[!&|()])|(?P<ident>[A-Za-z_][A-Za-z0-9_]*))"
)


def children(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, (Not, Eventually, Always)):
        return (f.arg,)
    if isinstance(f, (And, Or, Until)):
        return (f.lhs, f.rhs)
    return ()


def walk(f: Formula) -> Iterator[Formula]:
    yield f
    for c in children(f):
        yield from walk(c)


def atoms(f: Formula) -> set[str]:
    """Names of all atomic propositions occurring in ``f``."""
    return {g.name for g in walk(f) if isinstance(g, Atom)}


def negations_atomic_only(f: Formula) -> bool:
    """True iff every negation applies directly to an atom or a literal."""
    return all(
        isinstance(g.arg, (Atom, TrueF, FalseF))
        for g in walk(f)
        if isinstance(g, Not)
    )


def is_temporal(f: Formula) -> bool:
    return any(isinstance(g, (Until, Eventually, Always)) for g in walk(f))


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise FormulaSyntaxError(f"unknown token {text[bad]!r}", bad)
        kind = m.lastgroup
        tok = m.group(kind)
        tokens.append((tok, m.start(kind)))
        pos = m.end()
    tokens.append(("", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> str:
        return self.tokens[self.i][0]

    @property
    def pos(self) -> int:
        return self.tokens[self.i][1]

    def take(self, expected: str | None = None) -> str:
        tok = self.tok
        if expected is not None and tok != expected:
            found = repr(tok) if tok else "end of input"
            raise FormulaSyntaxError(f"expected {expected!r}, found {found}", self.pos)
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.implication()
        if self.tok != "":
            raise FormulaSyntaxError(f"unexpected token {self.tok!r}", self.pos)
        return f

    def implication(self) -> Formula:
        lhs = self.disjunction()
        if self.tok == "->":
            self.take()
            return Or(Not(lhs), self.implication())
        return lhs

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.tok == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.until()
        while self.tok == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        lhs = self.unary()
        if self.tok == "U":
            self.take()
            return Until(lhs, self.until())
        return lhs

    def unary(self) -> Formula:
        tok, pos = self.tok, self.pos
        if tok == "!":
            self.take()
            return Not(self.unary())
        if tok == "F":
            self.take()
            return Until(TRUE, self.unary())
        if tok == "G":
            self.take()
            return Always(self.unary())
        if tok == "(":
            self.take()
            f = self.implication()
            self.take(")")
            return f
        if tok == "true":
            self.take()
            return TRUE
        if tok == "false":
            self.take()
            return FALSE
        if tok and tok not in KEYWORDS and (tok[0].isalpha() or tok[0] == "_"):
            self.take()
            return Atom(tok)
        found = repr(tok) if tok else "end of input"
        raise FormulaSyntaxError(f"expected a formula, found {found}", pos)


def parse(text: str) -> Formula:
    """Parse ``text`` into a formula AST.

    >>> parse("p U q")
    Until(lhs=Atom(name='p'), rhs=Atom(name='q'))
    """
    return _Parser(text).parse()


def to_string(f: Formula) -> str:
    """Canonical, fully parenthesised text that `parse` maps back to ``f``."""
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Not):
        return "!" + to_string(f.arg)
    if isinstance(f, Eventually):
        return "F " + to_string(f.arg)
    if isinstance(f, Always):
        return "G " + to_string(f.arg)
    op = {And: "&", Or: "|", Until: "U"}[type(f)]
    return f"({to_string(f.lhs)} {op} {to_string(f.rhs)})"
