"""Terms, substitutions and syntactic unification.

Terms are immutable.  Three shapes exist: :class:`Var`, :class:`Const` and
:class:`Struct`.  Lists are built from the binary ``'.'`` functor and the
``'[]'`` constant.  Numbers are constants whose name is their source text.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from typing import Optional, Union

__all__ = [
    "Var", "Const", "Struct", "Term", "NIL", "CONS",
    "Substitution", "EMPTY", "VarSupply", "Clause",
    "unify", "apply", "compose", "rename_apart", "variant",
    "term_vars", "goal_vars", "make_list", "list_items", "is_ground",
    "format_term", "format_goal", "format_subst", "canonical_key",
    "atom_key", "max_var_id",
]

CONS = "."

# Parsed terms draw ids from this counter (negative) so that no two parsed
# texts share a variable; derivations number their fresh variables upward
# from zero.
_parse_ids = itertools.count(-1, -1)


def new_parse_var(name: Optional[str] = None) -> "Var":
    return Var(next(_parse_ids), name)


class Term:
    __slots__ = ()
    ground: bool


class Var(Term):
    __slots__ = ("id", "name")
    ground = False

    def __init__(self, id: int, name: Optional[str] = None):
        self.id = id
        self.name = name

    def __eq__(self, other):
        return type(other) is Var and other.id == self.id

    def __hash__(self):
        return self.id

    def __repr__(self):
        return f"Var({self.id}, {self.name!r})"

    def __str__(self):
        return self.name if self.name else f"_{self.id}"


class Const(Term):
    __slots__ = ("name",)
    ground = True

    def __init__(self, name: str):
        self.name = name

    def __eq__(self, other):
        return type(other) is Const and other.name == self.name

    def __hash__(self):
        return hash(self.name)

    def __repr__(self):
        return f"Const({self.name!r})"

    def __str__(self):
        return format_term(self)


class Struct(Term):
    __slots__ = ("functor", "args", "ground", "_hash")

    def __init__(self, functor: str, args: Iterable[Term]):
        args = tuple(args)
        if not args:
            raise ValueError("compound terms need at least one argument")
        self.functor = functor
        self.args = args
        self.ground = all(a.ground for a in args)
        self._hash = None

    def __eq__(self, other):
        if self is other:
            return True
        return (type(other) is Struct and other.functor == self.functor
                and other.args == self.args)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.functor, self.args))
        return self._hash

    def __repr__(self):
        return f"Struct({self.functor!r}, {list(self.args)!r})"

    def __str__(self):
        return format_term(self)


NIL = Const("[]")


def _mk(functor: str, args: tuple, ground: bool) -> Struct:
    s = object.__new__(Struct)
    s.functor = functor
    s.args = args
    s.ground = ground
    s._hash = None
    return s


def make_list(items: Iterable[Term], tail: Term = NIL) -> Term:
    out = tail
    for item in reversed(list(items)):
        out = Struct(CONS, (item, out))
    return out


def list_items(t: Term) -> tuple[list[Term], Term]:
    """Split a (possibly partial) list into its items and its tail."""
    items = []
    while type(t) is Struct and t.functor == CONS and len(t.args) == 2:
        items.append(t.args[0])
        t = t.args[1]
    return items, t


def atom_key(a: Term) -> tuple[str, int]:
    if type(a) is Struct:
        return a.functor, len(a.args)
    if type(a) is Const:
        return a.name, 0
    raise TypeError(f"not an atom: {a!r}")


def is_ground(t: Term) -> bool:
    return t.ground


def _iter_vars(t: Term) -> Iterator[Var]:
    stack = [t]
    while stack:
        t = stack.pop()
        if type(t) is Var:
            yield t
        elif type(t) is Struct and not t.ground:
            stack.extend(reversed(t.args))


def term_vars(t: Term) -> list[Var]:
    """Variables of ``t`` in order of first occurrence."""
    return list(dict.fromkeys(_iter_vars(t)))


def goal_vars(goal: Iterable[Term]) -> list[Var]:
    return list(dict.fromkeys(v for a in goal for v in _iter_vars(a)))


def max_var_id(terms: Iterable[Term]) -> int:
    return max((v.id for t in terms for v in _iter_vars(t)), default=-1)


# ---------------------------------------------------------------------------
# Substitutions


class Substitution(Mapping):
    """An immutable, idempotent map from variables to terms."""

    __slots__ = ("_b",)

    def __init__(self, bindings: Optional[Mapping[Var, Term]] = None):
        self._b = {v: t for v, t in (bindings or {}).items() if t != v}

    @classmethod
    def _trusted(cls, b: dict) -> "Substitution":
        s = object.__new__(cls)
        s._b = b
        return s

    def __getitem__(self, v):
        return self._b[v]

    def __iter__(self):
        return iter(self._b)

    def __len__(self):
        return len(self._b)

    def __eq__(self, other):
        if isinstance(other, Substitution):
            return self._b == other._b
        if isinstance(other, Mapping):
            return self._b == dict(other)
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._b.items()))

    def __repr__(self):
        return format_subst(self)

    def apply(self, t: Term) -> Term:
        if not self._b or t.ground:
            return t
        return _apply(self._b, t)

    def restrict(self, variables: Iterable[Var]) -> "Substitution":
        b = self._b
        return Substitution({v: b[v] for v in variables if v in b})

    def is_idempotent(self) -> bool:
        dom = self._b.keys()
        return not any(v in dom for t in self._b.values() for v in _iter_vars(t))


EMPTY = Substitution()


def _apply(b: dict, t: Term) -> Term:
    if type(t) is Var:
        return b.get(t, t)
    if t.ground:
        return t
    args = []
    ground = True
    for a in t.args:
        ta = type(a)
        if ta is Var:
            a = b.get(a, a)
            if not a.ground:
                ground = False
        elif ta is Struct and not a.ground:
            a = _apply(b, a)
            if not a.ground:
                ground = False
        args.append(a)
    return _mk(t.functor, tuple(args), ground)


def apply(s: Mapping[Var, Term], t: Term) -> Term:
    if isinstance(s, Substitution):
        return s.apply(t)
    return _apply(dict(s), t) if s else t


def compose(s1: Mapping[Var, Term], s2: Mapping[Var, Term]) -> Substitution:
    """Composition: applying the result equals applying ``s1`` then ``s2``.

    The law is exact whenever ``s2`` does not mention variables bound by
    ``s1`` (always the case along an SLD-derivation).  Otherwise the result
    is normalised to idempotent form by resolving binding chains.
    """
    b2 = dict(s2)
    out = {x: _apply(b2, t) for x, t in s1.items()}
    for y, t in b2.items():
        if y not in out:
            out[y] = t
    out = {v: t for v, t in out.items() if t != v}
    dom = out.keys()
    if any(v in dom for t in out.values() for v in _iter_vars(t)):
        out = _normalise(out)
    return Substitution(out)


def _normalise(b: dict) -> dict:
    # Resolve chains; a binding that would become cyclic is dropped at the
    # point where the cycle closes.
    out: dict = {}

    def resolve(t, seen):
        if type(t) is Var:
            if t in seen or t not in b:
                return t
            return resolve(b[t], seen | {t})
        if t.ground:
            return t
        return Struct(t.functor, [resolve(a, seen) for a in t.args])

    for v, t in b.items():
        r = resolve(t, frozenset({v}))
        if r != v:
            out[v] = r
    dom = out.keys()
    if any(v in dom for t in out.values() for v in _iter_vars(t)):
        # only a variable that occurs inside its own resolved binding is left
        raise ValueError("composition would bind a variable to a term containing it")
    return out


# ---------------------------------------------------------------------------
# Unification


def _walk(t, b):
    while type(t) is Var:
        nxt = b.get(t)
        if nxt is None:
            return t
        t = nxt
    return t


def _occurs(v, t, b) -> bool:
    stack = [t]
    while stack:
        t = _walk(stack.pop(), b)
        if type(t) is Var:
            if t.id == v.id:
                return True
        elif type(t) is Struct and not t.ground:
            stack.extend(t.args)
    return False


def _unify_into(t1: Term, t2: Term, b: dict, occurs_check: bool) -> bool:
    stack = [(t1, t2)]
    while stack:
        a, c = stack.pop()
        while type(a) is Var:
            nxt = b.get(a)
            if nxt is None:
                break
            a = nxt
        while type(c) is Var:
            nxt = b.get(c)
            if nxt is None:
                break
            c = nxt
        if a is c:
            continue
        ta, tc = type(a), type(c)
        if ta is Var:
            if tc is Var:
                if c.id == a.id:
                    continue
                # newer variable points at older so query variables survive
                if a.id < c.id:
                    a, c = c, a
                b[a] = c
                continue
            if occurs_check and tc is Struct and _occurs(a, c, b):
                return False
            b[a] = c
        elif tc is Var:
            if occurs_check and ta is Struct and _occurs(c, a, b):
                return False
            b[c] = a
        elif ta is Const:
            if tc is not Const or a.name != c.name:
                return False
        else:
            if (tc is not Struct or a.functor != c.functor
                    or len(a.args) != len(c.args)):
                return False
            if a.ground and c.ground:
                if a != c:
                    return False
                continue
            stack.extend(zip(a.args, c.args))
    return True


def _full(t, b):
    while type(t) is Var:
        nxt = b.get(t)
        if nxt is None:
            return t
        t = nxt
    if t.ground:
        return t
    args = []
    ground = True
    for a in t.args:
        a = _full(a, b)
        if not a.ground:
            ground = False
        args.append(a)
    return _mk(t.functor, tuple(args), ground)


def _cyclic(b: dict) -> bool:
    """Whether following the bindings from some variable leads back to it."""
    state: dict = {}
    for root in b:
        if root in state:
            continue
        stack = [(root, iter(term_vars(b[root])))]
        state[root] = 1
        while stack:
            v, it = stack[-1]
            for u in it:
                if u not in b:
                    continue
                s = state.get(u)
                if s == 1:
                    return True
                if s is None:
                    state[u] = 1
                    stack.append((u, iter(term_vars(b[u]))))
                    break
            else:
                state[v] = 2
                stack.pop()
    return False


def _resolve_bindings(b: dict) -> dict:
    # bindings never map a variable to itself, so no identity filtering
    return {v: _full(t, b) for v, t in b.items()}


def unify(t1: Term, t2: Term, occurs_check: bool = True) -> Optional[Substitution]:
    """Most general unifier of ``t1`` and ``t2``, or ``None``."""
    b: dict = {}
    if not _unify_into(t1, t2, b, occurs_check):
        return None
    if not occurs_check and _cyclic(b):
        # a rational-tree solution has no idempotent form; keep it triangular
        return Substitution._trusted(b)
    return Substitution._trusted(_resolve_bindings(b))


def variant(t1: Term, t2: Term) -> bool:
    """True when the terms are equal up to a consistent variable renaming."""
    return canonical_key(t1) == canonical_key(t2)


# ---------------------------------------------------------------------------
# Fresh variables and clauses


class VarSupply:
    """Monotone source of fresh variables owned by one derivation."""

    __slots__ = ("next_id",)

    def __init__(self, start: int = 0):
        self.next_id = start

    @classmethod
    def above(cls, terms: Iterable[Term]) -> "VarSupply":
        return cls(max(max_var_id(terms), -1) + 1)

    def fresh(self, name: Optional[str] = None) -> Var:
        v = Var(self.next_id, name)
        self.next_id += 1
        return v


@dataclass(frozen=True, eq=False)
class Clause:
    """A program clause ``head :- body``; ``label`` is None when unlabelled."""

    head: Term
    body: tuple[Term, ...] = ()
    id: str = ""
    label: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(goal_vars((self.head, *self.body))))

    @property
    def key(self) -> tuple[str, int]:
        return atom_key(self.head)

    @property
    def log_label(self) -> float:
        import math
        if self.label is None:
            raise ValueError(f"clause {self.id} is unlabelled")
        return math.log(self.label) if self.label > 0 else float("-inf")

    def renamed(self, supply: VarSupply) -> tuple[Term, tuple[Term, ...]]:
        """Head and body with every variable replaced by a fresh one."""
        n = len(self.variables)
        if not n:
            return self.head, self.body
        start = supply.next_id
        supply.next_id = start + n
        return self.instantiate(start)

    def instantiate(self, start: int) -> tuple[Term, tuple[Term, ...]]:
        """Copy using variables ``start .. start+len(variables)-1``."""
        build = self.__dict__.get("_build")
        if build is None:
            build = _compile_clause(self)
            object.__setattr__(self, "_build", build)
        return build(start)

    def __str__(self):
        from .program import format_clause
        return format_clause(self)


def _compile_clause(c: Clause):
    """Generate a constructor for renamed copies of ``c``.

    Ground subterms are shared with the original clause.
    """
    index = {v: i for i, v in enumerate(c.variables)}
    env = {"Var": Var, "_mk": _mk}

    def expr(t):
        if type(t) is Var:
            return f"v{index[t]}"
        if t.ground:
            name = f"k{len(env)}"
            env[name] = t
            return name
        args = "".join(expr(a) + ", " for a in t.args)
        return f"_mk({t.functor!r}, ({args}), False)"

    lines = ["def build(s):"]
    lines += [f"    v{i} = Var(s + {i})" for i in range(len(index))]
    body = "".join(expr(b) + ", " for b in c.body)
    lines.append(f"    return {expr(c.head)}, ({body})")
    exec("\n".join(lines), env)
    return env["build"]


def rename_apart(c: Clause, fresh: VarSupply) -> Clause:
    head, body = c.renamed(fresh)
    return Clause(head, body, c.id, c.label)


# ---------------------------------------------------------------------------
# Printing and canonical forms

_INFIX = {"=": "=", ":-": ":-", ",": ","}
_ALNUM = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


def _letters(i: int) -> str:
    q, r = divmod(i, 26)
    return chr(ord("A") + r) + (str(q) if q else "")


def _quote(name: str) -> str:
    if name == "[]":
        return name
    if name and name[0].islower() and all(ch in _ALNUM for ch in name):
        return name
    if _is_number(name):
        return name
    return "'" + name.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return s[0].isdigit() or (s[0] == "-" and len(s) > 1 and s[1].isdigit())


class _Namer:
    def __init__(self, canonical: bool):
        self.canonical = canonical
        self.names: dict = {}

    def __call__(self, v: Var) -> str:
        if not self.canonical:
            return v.name if v.name else f"_{v.id}"
        n = self.names.get(v)
        if n is None:
            n = self.names[v] = _letters(len(self.names))
        return n


def _fmt(t: Term, namer: _Namer, out: list, prec: int = 999) -> None:
    if type(t) is Var:
        out.append(namer(t))
    elif type(t) is Const:
        out.append(_quote(t.name))
    else:
        f, args = t.functor, t.args
        if f == CONS and len(args) == 2:
            items, tail = list_items(t)
            out.append("[")
            for i, x in enumerate(items):
                if i:
                    out.append(",")
                _fmt(x, namer, out)
            if tail != NIL:
                out.append("|")
                _fmt(tail, namer, out)
            out.append("]")
        elif f in ("=", ":-", ",") and len(args) == 2:
            # operators are printed parenthesised inside arguments
            wrap = prec < 1000 and f != "="
            if wrap:
                out.append("(")
            if f == ",":
                _fmt(args[0], namer, out, 999)
                out.append(", ")
                _fmt(args[1], namer, out, 1000)
            elif f == "=":
                _fmt(args[0], namer, out, 699)
                out.append(" = ")
                _fmt(args[1], namer, out, 699)
            else:
                _fmt(args[0], namer, out, 999)
                out.append(" :- ")
                _fmt(args[1], namer, out, 1000)
            if wrap:
                out.append(")")
        elif f == "\\+" and len(args) == 1:
            out.append("\\+ ")
            a = args[0]
            if type(a) is Struct and a.functor in (",", ":-") and len(a.args) == 2:
                out.append("(")
                _fmt(a, namer, out, 1200)
                out.append(")")
            else:
                _fmt(a, namer, out, 900)
        else:
            out.append(_quote(f))
            out.append("(")
            for i, x in enumerate(args):
                if i:
                    out.append(",")
                _fmt(x, namer, out)
            out.append(")")


def format_term(t: Term, canonical: bool = True, _namer: Optional[_Namer] = None) -> str:
    """Print a term; canonical printing names variables A, B, C... by first occurrence."""
    namer = _namer or _Namer(canonical)
    out: list = []
    _fmt(t, namer, out)
    return "".join(out)


def format_goal(goal: Iterable[Term], canonical: bool = True, _namer: Optional[_Namer] = None) -> str:
    namer = _namer or _Namer(canonical)
    parts = []
    for a in goal:
        out: list = []
        _fmt(a, namer, out, 999)
        parts.append("".join(out))
    return ", ".join(parts)


def format_subst(s: Mapping[Var, Term], canonical: bool = False) -> str:
    namer = _Namer(canonical)
    parts = []
    for v, t in s.items():
        parts.append(f"{namer(v)}/{format_term(t, _namer=namer)}")
    return "{" + ", ".join(parts) + "}"


def canonical_key(t: Union[Term, Iterable[Term]]):
    """Hashable structure of ``t`` (or a goal) with variables numbered by first occurrence."""
    names: dict = {}

    def k(t):
        if type(t) is Var:
            n = names.get(t)
            if n is None:
                n = names[t] = len(names)
            return ("$V", n)
        if type(t) is Const:
            return t.name
        if t.ground:
            return t
        return (t.functor,) + tuple(k(a) for a in t.args)

    if isinstance(t, Term):
        return k(t)
    return tuple(k(a) for a in t)
