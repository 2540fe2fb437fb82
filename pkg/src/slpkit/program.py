"""Stochastic logic programs: representation, parsing, printing, validation."""

from __future__ import annotations

import hashlib
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Iterable, Optional

from .parser import Diagnostic, SLPSyntaxError, flatten_conj, parse_clauses
from .terms import Clause, Term, apply, atom_key, new_parse_var, _Namer, _fmt

BUILTINS = {("=", 2), ("\\+", 1)}
# conjunction terms only ever appear as arguments of \+
CONTROL = BUILTINS | {(",", 2)}

DEFAULT_TOL = 1e-9


def key_str(key: tuple[str, int]) -> str:
    return f"{key[0]}/{key[1]}"


@dataclass(frozen=True, eq=False)
class PredicateDef:
    key: tuple[str, int]
    clauses: tuple[Clause, ...]

    def __post_init__(self):
        labelled = self.clauses[0].label is not None if self.clauses else False
        object.__setattr__(self, "labelled", labelled)
        if labelled:
            cum = tuple(accumulate(c.label for c in self.clauses))
            object.__setattr__(self, "cumulative", cum)
            object.__setattr__(self, "total", cum[-1])

    @property
    def kind(self) -> str:
        return "labelled" if self.labelled else "unlabelled"

    @property
    def label_sum(self) -> float:
        return math.fsum(c.label for c in self.clauses) if self.labelled else 0.0

    def draw(self, u: float) -> Clause:
        """Cumulative-label inversion for a uniform draw ``u`` in [0, 1)."""
        i = bisect_right(self.cumulative, u * self.total)
        return self.clauses[min(i, len(self.clauses) - 1)]


@dataclass(frozen=True, eq=False)
class SLP:
    defs: dict[tuple[str, int], PredicateDef] = field(default_factory=dict)
    source: str = "<string>"
    tol: float = DEFAULT_TOL

    def get(self, key: tuple[str, int]) -> Optional[PredicateDef]:
        return self.defs.get(key)

    def clauses(self) -> list[Clause]:
        return [c for d in self.defs.values() for c in d.clauses]

    @property
    def pure(self) -> bool:
        return all(d.labelled for d in self.defs.values())

    def clause(self, clause_id: str) -> Clause:
        for c in self.clauses():
            if c.id == clause_id:
                return c
        raise KeyError(clause_id)

    def renormalized(self) -> "SLP":
        """Copy with every labelled definition rescaled to sum to one."""
        defs = {}
        for k, d in self.defs.items():
            if d.labelled and d.label_sum > 0:
                s = d.label_sum
                d = PredicateDef(k, tuple(Clause(c.head, c.body, c.id, c.label / s)
                                          for c in d.clauses))
            defs[k] = d
        return SLP(defs, self.source, self.tol)

    def digest(self) -> str:
        return hashlib.sha256(format_slp(self).encode()).hexdigest()

    def __str__(self):
        return format_slp(self)


def build_slp(clauses: Iterable[Clause], source: str = "<string>",
              tol: float = DEFAULT_TOL) -> SLP:
    """Group clauses into definitions (first-appearance order) and assign ids."""
    grouped: dict[tuple[str, int], list[Clause]] = {}
    for c in clauses:
        grouped.setdefault(atom_key(c.head), []).append(c)
    defs = {}
    for k, cs in grouped.items():
        cs = [_fresh_copy(c, c.id or f"{key_str(k)}#{i}") for i, c in enumerate(cs, 1)]
        defs[k] = PredicateDef(k, tuple(cs))
    return SLP(defs, source, tol)


def _fresh_copy(c: Clause, clause_id: str) -> Clause:
    # program variables live in the parse id space, disjoint from the
    # non-negative ids handed out during derivations
    b = {v: new_parse_var(v.name) for v in c.variables if v.id >= 0}
    if b:
        return Clause(apply(b, c.head), tuple(apply(b, a) for a in c.body), clause_id, c.label)
    return Clause(c.head, c.body, clause_id, c.label)


def parse_slp(source: str, name: str = "<string>", tol: float = DEFAULT_TOL) -> SLP:
    """Parse ``.slp`` text.

    Raises :class:`SLPSyntaxError` carrying every diagnostic found: syntax
    errors stop parsing; label problems are collected across the program.
    """
    parsed = parse_clauses(source)
    diags: list[Diagnostic] = []
    first_seen: dict[tuple[str, int], tuple[bool, int, int]] = {}
    reported = set()
    clauses = []
    for pc in parsed:
        k = atom_key(pc.head)
        if k in BUILTINS or k == (",", 2):
            diags.append(Diagnostic(pc.line, pc.col, f"cannot redefine builtin {key_str(k)}"))
            continue
        if pc.label is not None and pc.label < 0:
            diags.append(Diagnostic(pc.line, pc.col,
                                    f"negative label {pc.label:g} on {key_str(k)}"))
        has = pc.label is not None
        if k not in first_seen:
            first_seen[k] = (has, pc.line, pc.col)
        elif first_seen[k][0] != has and k not in reported:
            reported.add(k)
            diags.append(Diagnostic(pc.line, pc.col,
                                    f"mixed labelled/unlabelled predicate {key_str(k)}"))
        clauses.append(Clause(pc.head, pc.body, "", pc.label))
    if diags:
        raise SLPSyntaxError(diags)
    return build_slp(clauses, name, tol)


def load_slp(path, tol: float = DEFAULT_TOL) -> SLP:
    with open(path, encoding="utf-8") as fh:
        return parse_slp(fh.read(), str(path), tol)


# ---------------------------------------------------------------------------
# Printing


def format_label(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def format_clause(c: Clause) -> str:
    namer = _Namer(True)
    out: list = []
    if c.label is not None:
        out.append(format_label(c.label) + " : ")
    _fmt(c.head, namer, out)
    if c.body:
        out.append(" :- ")
        for i, lit in enumerate(c.body):
            if i:
                out.append(", ")
            _fmt(lit, namer, out, 999)
    out.append(".")
    return "".join(out)


def format_slp(slp: SLP) -> str:
    return "".join(format_clause(c) + "\n" for c in slp.clauses())


# ---------------------------------------------------------------------------
# Validation


@dataclass
class ValidationReport:
    sums: dict[str, float]
    unlabelled: list[str]
    undefined: list[str]
    zero_labels: list[str]
    bad_sums: list[str]
    tol: float

    @property
    def pure(self) -> bool:
        return not self.unlabelled

    @property
    def ok(self) -> bool:
        return not self.bad_sums and not self.undefined

    def lines(self) -> list[str]:
        out = [f"{k}\tsum={format_label(s)}\t{'ok' if k not in self.bad_sums else 'BAD'}"
               for k, s in self.sums.items()]
        out += [f"{k}\tunlabelled" for k in self.unlabelled]
        out += [f"undefined\t{k}" for k in self.undefined]
        out += [f"zero-label\t{c}" for c in self.zero_labels]
        out.append(f"pure={'yes' if self.pure else 'no'}\tstatus={'ok' if self.ok else 'failed'}")
        return out


def called_keys(t: Term) -> list[tuple[str, int]]:
    """Predicates called by a body literal, looking through \\+ and conjunctions."""
    out = []
    stack = [t]
    while stack:
        lit = stack.pop()
        k = atom_key(lit)
        if k == ("\\+", 1):
            stack.append(lit.args[0])
        elif k == (",", 2):
            stack.extend(flatten_conj(lit))
        else:
            out.append(k)
    return out


def validate(slp: SLP, tol: Optional[float] = None) -> ValidationReport:
    tol = slp.tol if tol is None else tol
    sums, unlabelled, zero, bad = {}, [], [], []
    for k, d in slp.defs.items():
        if d.labelled:
            s = d.label_sum
            sums[key_str(k)] = s
            if abs(s - 1.0) > tol:
                bad.append(key_str(k))
            zero += [c.id for c in d.clauses if c.label == 0]
        else:
            unlabelled.append(key_str(k))
    undefined = []
    for c in slp.clauses():
        for lit in c.body:
            for k in called_keys(lit):
                if k not in slp.defs and k not in BUILTINS:
                    name = key_str(k)
                    if name not in undefined:
                        undefined.append(name)
    return ValidationReport(sums, unlabelled, sorted(undefined), zero, bad, tol)
