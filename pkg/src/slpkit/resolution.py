"""SLD resolution: steps, derivations, SLD-tree enumeration and impure calls.

Labelled predicates are resolved one clause at a time and contribute their
label to a derivation's potential.  Unlabelled predicates and the builtins
``=/2`` and ``\\+/1`` are run to their first answer by an ordinary
depth-first Prolog search and recorded as one deterministic step.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .parser import flatten_conj
from .program import SLP
from .terms import (
    EMPTY, NIL, Clause, Const, Struct, Substitution, Term, VarSupply,
    atom_key, compose, format_goal, format_subst, format_term, goal_vars,
    unify,
)

Goal = tuple[Term, ...]

UNIFY = ("=", 2)
NOT = ("\\+", 1)
AND = (",", 2)


class Status(str, Enum):
    REFUTED = "refuted"
    FAILED = "failed"
    DEPTH = "depth_exceeded"


class DepthExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Limits:
    max_depth: int = 1000
    max_solutions: Optional[int] = None
    occurs_check: bool = True


DEFAULT_LIMITS = Limits()


class Step:
    """One resolution step ``(G_j, A_j, C_j, theta_j)``.

    ``mgu`` is None when the head failed to unify.  ``clause`` is None for
    builtin and unlabelled calls.  ``answer_term`` holds the initial goal's
    variables as instantiated *before* this step.
    """

    __slots__ = ("goal", "selected", "clause_id", "mgu", "clause", "answer_term")

    def __init__(self, goal: Goal, selected: int, clause_id: str,
                 mgu: Optional[Substitution], clause: Optional[Clause] = None,
                 answer_term: Term = NIL):
        self.goal = goal
        self.selected = selected
        self.clause_id = clause_id
        self.mgu = mgu
        self.clause = clause
        self.answer_term = answer_term

    @property
    def atom(self) -> Term:
        return self.goal[self.selected]

    @property
    def label(self) -> Optional[float]:
        return self.clause.label if self.clause is not None else None

    def __repr__(self):
        return f"Step({self.clause_id}, {format_term(self.atom, canonical=False)})"


@dataclass(frozen=True, eq=False)
class Derivation:
    initial: Goal
    steps: tuple[Step, ...]
    status: Status
    goal: Goal
    answer_term: Term
    next_var: int = 0

    @property
    def refuted(self) -> bool:
        return self.status is Status.REFUTED

    @property
    def depth(self) -> int:
        return len(self.steps)

    @property
    def counts(self) -> Counter:
        """Usage count of each labelled clause."""
        return Counter(s.clause_id for s in self.steps if s.label is not None)

    @property
    def psi(self) -> float:
        out = 1.0
        for s in self.steps:
            if s.clause is not None and s.clause.label is not None:
                out *= s.clause.label
        return out

    @property
    def answer(self) -> Substitution:
        vs = goal_vars(self.initial)
        if not vs:
            return EMPTY
        return Substitution(dict(zip(vs, self.answer_term.args)))

    def clause_path(self) -> tuple[str, ...]:
        return tuple(s.clause_id for s in self.steps)


Refutation = Derivation


def answer_term(goal: Goal) -> Term:
    vs = goal_vars(goal)
    return Struct("$ans", vs) if vs else Const("$ans")


def _apply_goal(s: Substitution, goal: Iterable[Term]) -> Goal:
    return tuple(s.apply(a) for a in goal)


# ---------------------------------------------------------------------------
# Single steps


def resolve_step(goal: Goal, sel: int, clause: Clause, fresh: VarSupply,
                 occurs_check: bool = True) -> Optional[tuple[Goal, Substitution]]:
    """Resolve ``goal[sel]`` against a renamed copy of ``clause``."""
    if not 0 <= sel < len(goal):
        raise IndexError(f"selected atom {sel} out of range")
    atom = goal[sel]
    if atom_key(atom) != clause.key:
        raise ValueError(f"clause {clause.id} does not define {atom_key(atom)}")
    head, body = clause.renamed(fresh)
    theta = unify(atom, head, occurs_check)
    if theta is None:
        return None
    nxt = goal[:sel] + body + goal[sel + 1:]
    return _apply_goal(theta, nxt), theta


def is_deterministic(slp: SLP, atom: Term) -> bool:
    """Builtins and unlabelled predicates are run atomically."""
    k = atom_key(atom)
    if k in (UNIFY, NOT, AND):
        return True
    d = slp.get(k)
    return d is None or not d.labelled


def deterministic_step(slp: SLP, atom: Term, supply: VarSupply,
                       limits: Limits) -> Optional[Substitution]:
    """Run a builtin or unlabelled call to its first answer (committed)."""
    k = atom_key(atom)
    if k == UNIFY:
        return unify(atom.args[0], atom.args[1], limits.occurs_check)
    if k == NOT:
        found = _solve_first(slp, tuple(flatten_conj(atom.args[0])), supply, limits)
        return EMPTY if found is None else None
    return _solve_first(slp, tuple(flatten_conj(atom)), supply, limits)


def _solve_first(slp: SLP, goal: Goal, supply: VarSupply,
                 limits: Limits) -> Optional[Substitution]:
    vs = goal_vars(goal)
    oc = limits.occurs_check
    stack = [(goal, answer_term(goal), 0)]
    while stack:
        g, ans, depth = stack.pop()
        if not g:
            return Substitution(dict(zip(vs, ans.args))) if vs else EMPTY
        if depth >= limits.max_depth:
            raise DepthExceeded(f"impure call exceeded depth {limits.max_depth}")
        a, rest = g[0], g[1:]
        k = atom_key(a)
        if k == UNIFY:
            theta = unify(a.args[0], a.args[1], oc)
            if theta is not None:
                stack.append((_apply_goal(theta, rest), theta.apply(ans), depth + 1))
        elif k == NOT:
            if _solve_first(slp, tuple(flatten_conj(a.args[0])), supply, limits) is None:
                stack.append((rest, ans, depth + 1))
        elif k == AND:
            stack.append((tuple(flatten_conj(a)) + rest, ans, depth))
        else:
            d = slp.get(k)
            if d is None:
                continue
            children = []
            for c in d.clauses:
                head, body = c.renamed(supply)
                theta = unify(a, head, oc)
                if theta is not None:
                    children.append((_apply_goal(theta, body + rest), theta.apply(ans), depth + 1))
            stack.extend(reversed(children))
    return None


def call_impure(slp: SLP, goal: Sequence[Term], limits: Limits = DEFAULT_LIMITS) -> Optional[Substitution]:
    """First answer of ``goal`` by depth-first SLD with backtracking.

    Labels are ignored.  The answer is restricted to the goal's variables and
    is final: callers never ask for a second one.  Raises
    :class:`DepthExceeded` when a branch runs past ``limits.max_depth``.
    """
    goal = tuple(goal)
    return _solve_first(slp, goal, VarSupply.above(goal), limits)


# ---------------------------------------------------------------------------
# Enumeration of the SLD-tree


def leftmost(goal: Goal) -> int:
    return 0


def rightmost(goal: Goal) -> int:
    return len(goal) - 1


@dataclass
class Enumeration:
    derivations: list[Derivation] = field(default_factory=list)
    truncated: bool = False

    @property
    def refutations(self) -> list[Derivation]:
        return [d for d in self.derivations if d.refuted]

    def __iter__(self):
        return iter(self.derivations)

    def __len__(self):
        return len(self.derivations)


def _materialise(link) -> tuple[Step, ...]:
    out = []
    while link is not None:
        step, link = link
        out.append(step)
    out.reverse()
    return tuple(out)


def enumerate_derivations(slp: SLP, goal: Sequence[Term], limits: Limits = DEFAULT_LIMITS,
                          refutations_only: bool = False,
                          select: Callable[[Goal], int] = leftmost) -> Enumeration:
    """Depth-first, clause-order walk of the whole SLD-tree under ``goal``.

    Every leaf becomes a derivation: refutations, failures (including a
    failed head unification for each non-matching clause) and branches cut
    by ``limits.max_depth``.  ``truncated`` is set whenever a limit cut
    something off.
    """
    goal = tuple(goal)
    supply = VarSupply.above(goal)
    oc = limits.occurs_check
    result = Enumeration()
    solutions = 0

    def leaf(g, ans, link, status):
        if refutations_only and status is not Status.REFUTED:
            return
        result.derivations.append(
            Derivation(goal, _materialise(link), status, g, ans, supply.next_id))

    # entries: (goal, answer term, step link, depth, failed)
    stack = [(goal, answer_term(goal), None, 0, False)]
    while stack:
        if limits.max_solutions is not None and solutions >= limits.max_solutions:
            result.truncated = True
            break
        g, ans, link, depth, failed = stack.pop()
        if failed:
            leaf(g, ans, link, Status.FAILED)
            continue
        if not g:
            solutions += 1
            leaf(g, ans, link, Status.REFUTED)
            continue
        if depth >= limits.max_depth:
            result.truncated = True
            leaf(g, ans, link, Status.DEPTH)
            continue
        sel = select(g)
        a = g[sel]
        if is_deterministic(slp, a):
            try:
                theta = deterministic_step(slp, a, supply, limits)
            except DepthExceeded:
                result.truncated = True
                leaf(g, ans, link, Status.DEPTH)
                continue
            step = Step(g, sel, _builtin_id(a), theta, None, ans)
            if theta is None:
                leaf(g, ans, (step, link), Status.FAILED)
            else:
                stack.append((_apply_goal(theta, g[:sel] + g[sel + 1:]), theta.apply(ans),
                              (step, link), depth + 1, False))
            continue
        children = []
        for c in slp.get(atom_key(a)).clauses:
            head, body = c.renamed(supply)
            theta = unify(a, head, oc)
            step = Step(g, sel, c.id, theta, c, ans)
            if theta is None:
                children.append((g, ans, (step, link), depth + 1, True))
            else:
                nxt = _apply_goal(theta, g[:sel] + body + g[sel + 1:])
                children.append((nxt, theta.apply(ans), (step, link), depth + 1, False))
        stack.extend(reversed(children))
    return result


def replay(slp: SLP, goal: Sequence[Term], choices: Sequence[Optional[Clause]],
           status: Status, limits: Limits = DEFAULT_LIMITS) -> Derivation:
    """Rebuild a leftmost derivation from its input clauses.

    ``None`` entries stand for deterministic (builtin or unlabelled) steps,
    which are re-run.  Replay stops at the first failing step; ``status``
    is taken as given so depth-limited runs keep their status.
    """
    goal = tuple(goal)
    supply = VarSupply.above(goal)
    g, ans = goal, answer_term(goal)
    steps = []
    for c in choices:
        a = g[0]
        if c is None:
            theta = deterministic_step(slp, a, supply, limits)
            steps.append(Step(g, 0, _builtin_id(a), theta, None, ans))
            if theta is None:
                break
            g = _apply_goal(theta, g[1:])
        else:
            r = resolve_step(g, 0, c, supply, limits.occurs_check)
            steps.append(Step(g, 0, c.id, None if r is None else r[1], c, ans))
            if r is None:
                break
            g, theta = r
        ans = theta.apply(ans)
    return Derivation(goal, tuple(steps), status, g, ans, supply.next_id)


def choices_of(d: Derivation) -> list[Optional[Clause]]:
    return [s.clause for s in d.steps]


def _builtin_id(atom: Term) -> str:
    k = atom_key(atom)
    return f"{k[0]}/{k[1]}"


def refutations(slp: SLP, goal: Sequence[Term], limits: Limits = DEFAULT_LIMITS) -> list[Derivation]:
    return enumerate_derivations(slp, goal, limits, refutations_only=True).refutations


# ---------------------------------------------------------------------------
# Answers and yields


def computed_answer(r: Derivation) -> Substitution:
    """Composition of every step's unifier, restricted to the initial goal's variables."""
    if not r.refuted:
        raise ValueError("computed answers exist only for refutations")
    theta = EMPTY
    for s in r.steps:
        theta = compose(theta, s.mgu)
    return theta.restrict(goal_vars(r.initial))


def yield_of(r: Derivation) -> Term:
    if len(r.initial) != 1:
        raise ValueError("yields are defined for unit goals only")
    if not r.refuted:
        raise ValueError("yields are defined for refutations only")
    return r.answer.apply(r.initial[0])


# ---------------------------------------------------------------------------
# Trace format


def format_trace(d: Derivation) -> str:
    """One line per step ``depth | selected-atom | clause-id | mgu`` plus a status line."""
    lines = []
    for i, s in enumerate(d.steps):
        mgu = "fail" if s.mgu is None else format_subst(s.mgu)
        lines.append(f"{i} | {format_term(s.atom, canonical=False)} | {s.clause_id} | {mgu}")
    if d.status is Status.REFUTED:
        lines.append(f"REFUTED {format_subst(d.answer)}")
    elif d.status is Status.FAILED:
        lines.append("FAILED")
    else:
        lines.append("DEPTH")
    return "\n".join(lines)


def describe(d: Derivation) -> str:
    return f"{d.status.value}: {format_goal(d.initial)}"
