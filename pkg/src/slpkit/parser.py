"""Tokenizer and recursive-descent parser for the ``.slp`` text format.

Grammar (``%`` starts a line comment)::

    clause  := [LABEL ':'] term [':-' body] '.'
    body    := literal (',' literal)*
    literal := '\\+' literal | term ['=' term]
    term    := VAR | NUMBER | NAME ['(' term (',' term)* ')'] | list
             | '(' body [':-' body] ')'
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .terms import CONS, NIL, Const, Struct, Term, Var, make_list, new_parse_var

_TOKEN = re.compile(r"""
    (?P<ws>\s+|%[^\n]*)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<qname>'(?:[^'\\]|\\.)*')
  | (?P<punct>:-|\\\+|[()\[\]|,.:=])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self):
        return f"{self.line}:{self.col}: {self.message}"


class SLPSyntaxError(ValueError):
    """Raised with one or more diagnostics when source text is rejected."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise SLPSyntaxError([Diagnostic(line, pos - line_start + 1,
                                             f"unexpected character {text[pos]!r}")])
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def _unquote(text: str) -> str:
    return re.sub(r"\\(.)", r"\1", text[1:-1])


def conj(literals: list[Term]) -> Term:
    out = literals[-1]
    for lit in reversed(literals[:-1]):
        out = Struct(",", (lit, out))
    return out


def flatten_conj(t: Term) -> list[Term]:
    out = []
    while type(t) is Struct and t.functor == "," and len(t.args) == 2:
        out.extend(flatten_conj(t.args[0]))
        t = t.args[1]
    out.append(t)
    return out


@dataclass
class ParsedClause:
    label: Optional[float]
    head: Term
    body: tuple[Term, ...]
    line: int
    col: int


class Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.varmap: dict[str, Var] = {}

    # -- helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        found = tok.text or "end of input"
        raise SLPSyntaxError([Diagnostic(tok.line, tok.col, f"{msg} (found {found!r})")])

    def accept(self, text: str) -> bool:
        if self.tok.kind == "punct" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            self.error(f"expected {text!r}")

    def var(self, name: str) -> Var:
        if name == "_":
            return new_parse_var("_")
        v = self.varmap.get(name)
        if v is None:
            v = self.varmap[name] = new_parse_var(name)
        return v

    # -- grammar
    def clauses(self) -> list[ParsedClause]:
        out = []
        while self.tok.kind != "eof":
            out.append(self.clause())
        return out

    def clause(self) -> ParsedClause:
        self.varmap = {}
        start = self.tok
        label = None
        if (self.tok.kind == "number" and self.tokens[self.i + 1].kind == "punct"
                and self.tokens[self.i + 1].text == ":"):
            label = float(self.tok.text)
            self.i += 2
        head = self.term()
        if type(head) is Var or (type(head) is Const and _is_numeric(head.name)):
            self.error("clause head must be an atom", start)
        body: list[Term] = []
        if self.accept(":-"):
            body = self.body()
        self.expect(".")
        return ParsedClause(label, head, tuple(body), start.line, start.col)

    def body(self) -> list[Term]:
        lits = [self.literal()]
        while self.accept(","):
            lits.append(self.literal())
        return [x for lit in lits for x in flatten_conj(lit)]

    def literal(self) -> Term:
        if self.accept("\\+"):
            return Struct("\\+", (self.literal(),))
        t = self.term()
        if self.accept("="):
            t = Struct("=", (t, self.term()))
        return t

    def term(self) -> Term:
        tok = self.tok
        if tok.kind == "var":
            self.i += 1
            return self.var(tok.text)
        if tok.kind == "number":
            self.i += 1
            return Const(tok.text)
        if tok.kind in ("name", "qname"):
            self.i += 1
            name = tok.text if tok.kind == "name" else _unquote(tok.text)
            if self.tok.kind == "punct" and self.tok.text == "(" and self._adjacent(tok):
                self.i += 1
                args = [self.arg()]
                while self.accept(","):
                    args.append(self.arg())
                self.expect(")")
                return Struct(name, args)
            return Const(name)
        if self.accept("["):
            if self.accept("]"):
                return NIL
            items = [self.arg()]
            while self.accept(","):
                items.append(self.arg())
            tail = self.arg() if self.accept("|") else NIL
            self.expect("]")
            return make_list(items, tail)
        if self.accept("("):
            lits = self.body()
            t = conj(lits)
            if self.accept(":-"):
                t = Struct(":-", (t, conj(self.body())))
            self.expect(")")
            return t
        if tok.kind == "punct" and tok.text == "\\+":
            return self.literal()
        self.error("expected a term")

    def arg(self) -> Term:
        t = self.term()
        if self.accept("="):
            t = Struct("=", (t, self.term()))
        return t

    def _adjacent(self, tok: Token) -> bool:
        nxt = self.tok
        return nxt.line == tok.line and nxt.col == tok.col + len(tok.text)


def _is_numeric(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def parse_clauses(text: str) -> list[ParsedClause]:
    return Parser(text).clauses()


def parse_term(text: str) -> Term:
    """Parse a single term; a trailing ``.`` is optional."""
    p = Parser(text)
    t = p.literal()
    p.accept(".")
    if p.tok.kind != "eof":
        p.error("trailing input")
    return t


def parse_goal(text: str) -> tuple[Term, ...]:
    """Parse a goal written like a clause body, e.g. ``p(X), q(X)``.

    A leading ``:-`` or ``?-``-free ``:-`` prefix is tolerated.
    """
    p = Parser(text)
    p.accept(":-")
    if p.tok.kind == "eof":
        return ()
    lits = p.body()
    p.accept(".")
    if p.tok.kind != "eof":
        p.error("trailing input")
    return tuple(lits)
