"""Sampling SLD-derivations under the loglinear, unification-constrained and
backtrackable semantics, plus importance-weighted event estimation.

All samplers use the leftmost computation rule and draw clauses by
cumulative-label inversion over a definition's stored clause order, so a
run is a deterministic function of (program, goal, generator state).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .machine import Machine, Run
from .program import SLP
from .resolution import (
    Derivation, Limits, Status, Step, answer_term, enumerate_derivations,
    replay, yield_of,
)
from .terms import (
    EMPTY, Clause, Struct, Substitution, Term, VarSupply, format_goal,
    format_term, goal_vars, rename_apart, unify,
)

LOGLINEAR = "loglinear"
UNIF_CONSTRAINED = "unif_constrained"
BACKTRACKABLE = "backtrackable"
METHODS = (LOGLINEAR, UNIF_CONSTRAINED, BACKTRACKABLE)

DEFAULT_MAX_DEPTH = 1000


def _key(a):
    return (a.functor, len(a.args)) if type(a) is Struct else (a.name, 0)


class SampleRecord:
    """One sampled derivation.

    The record keeps the input-clause sequence; the full step-by-step
    :class:`Derivation` is rebuilt by replay the first time it is asked for.
    """

    __slots__ = ("slp", "goal", "choices", "status", "answer", "psi", "psi_u", "iw",
                 "method", "limits", "_derivation")

    def __init__(self, slp: SLP, goal: tuple, run: Run, method: str, limits: Limits):
        self.slp = slp
        self.goal = goal
        self.choices = tuple(run.choices)
        self.status = run.status
        self.answer = run.answer
        psi = 1.0
        for c in self.choices:
            if c is not None:
                psi *= c.label
        self.psi = psi
        self.psi_u = run.psi_u
        self.iw = run.iw
        self.method = method
        self.limits = limits
        self._derivation = None

    @property
    def derivation(self) -> Derivation:
        if self._derivation is None:
            self._derivation = replay(self.slp, self.goal, self.choices, self.status, self.limits)
        return self._derivation

    @property
    def refuted(self) -> bool:
        return self.status is Status.REFUTED

    @property
    def depth(self) -> int:
        return len(self.choices)

    def answer_subst(self) -> Substitution:
        vs = goal_vars(self.goal)
        if not vs or self.answer is None:
            return EMPTY
        return Substitution(dict(zip(vs, self.answer.args)))

    @property
    def yield_atom(self) -> Optional[Term]:
        if not self.refuted or not self.goal:
            return None
        theta = self.answer_subst()
        if len(self.goal) == 1:
            return theta.apply(self.goal[0])
        return Struct(",", tuple(theta.apply(a) for a in self.goal))

    def yield_text(self) -> Optional[str]:
        if not self.refuted:
            return None
        theta = self.answer_subst()
        if len(self.goal) == 1:
            return format_term(theta.apply(self.goal[0]))
        return format_goal([theta.apply(a) for a in self.goal])

    def to_json(self, seed=None) -> dict:
        return {
            "method": self.method,
            "status": self.status.value,
            "yield": self.yield_text(),
            "psi": self.psi,
            "psi_u": self.psi_u,
            "iw": self.iw,
            "depth": self.depth,
            "seed": seed,
        }


def _run(slp, goal, rng, max_depth, occurs_check, method):
    goal = tuple(goal)
    m = Machine(slp, max_depth, occurs_check)
    start = VarSupply.above(goal).next_id
    run = getattr(m, method)(goal, answer_term(goal), start, rng.random)
    return SampleRecord(slp, goal, run, method, m.limits)


def sample_loglinear(slp: SLP, goal: Sequence[Term], rng: np.random.Generator,
                     max_depth: int = DEFAULT_MAX_DEPTH, occurs_check: bool = True) -> SampleRecord:
    """Draw one derivation; each input clause comes from the whole definition.

    A failed draw is not retried: the record ends at the failing step.
    """
    return _run(slp, goal, rng, max_depth, occurs_check, LOGLINEAR)


def sample_unif_constrained(slp: SLP, goal: Sequence[Term], rng: np.random.Generator,
                            max_depth: int = DEFAULT_MAX_DEPTH,
                            occurs_check: bool = True) -> SampleRecord:
    """Draw one derivation choosing only among clauses whose heads unify.

    A selected atom with no unifying clause is a dead end: the derivation
    fails there, with no backtracking.
    """
    return _run(slp, goal, rng, max_depth, occurs_check, UNIF_CONSTRAINED)


def sample_backtrackable(slp: SLP, goal: Sequence[Term], rng: np.random.Generator,
                         max_depth: int = DEFAULT_MAX_DEPTH,
                         occurs_check: bool = True) -> SampleRecord:
    """Prolog with a probabilistic clause selector.

    On failure the most recent choice point drops the clause that failed
    and redraws among the survivors in proportion to their labels.  The
    result fails only once every alternative at the root is exhausted.
    """
    return _run(slp, goal, rng, max_depth, occurs_check, BACKTRACKABLE)


SAMPLERS = {
    LOGLINEAR: sample_loglinear,
    UNIF_CONSTRAINED: sample_unif_constrained,
    BACKTRACKABLE: sample_backtrackable,
}


def sample(slp: SLP, goal: Sequence[Term], method: str, rng: np.random.Generator,
           max_depth: int = DEFAULT_MAX_DEPTH, occurs_check: bool = True) -> SampleRecord:
    try:
        fn = SAMPLERS[method]
    except KeyError:
        raise ValueError(f"unknown sampling method {method!r}") from None
    return fn(slp, goal, rng, max_depth, occurs_check)


def sample_many(slp, goal, method, n, rng, max_depth=DEFAULT_MAX_DEPTH,
                occurs_check=True) -> Iterator[SampleRecord]:
    if method not in SAMPLERS:
        raise ValueError(f"unknown sampling method {method!r}")
    goal = tuple(goal)
    m = Machine(slp, max_depth, occurs_check)
    run = getattr(m, method)
    ans = answer_term(goal)
    start = VarSupply.above(goal).next_id
    random = rng.random
    for _ in range(n):
        yield SampleRecord(slp, goal, run(goal, ans, start, random), method, m.limits)


def importance_weight(rec: SampleRecord) -> float:
    """Unnormalised weight p/p^u of a unification-constrained refutation."""
    if rec.method != UNIF_CONSTRAINED:
        raise ValueError("importance weights come from unification-constrained samples")
    if not rec.refuted:
        raise ValueError("importance weights are defined for refutations only")
    return rec.iw


# ---------------------------------------------------------------------------
# Estimation


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n: int
    effective_sample_size: float
    refutations: int = 0

    @property
    def defined(self) -> bool:
        return self.refutations > 0


def matches(atom: Term, pattern: Term) -> bool:
    """True when ``atom`` unifies with a renamed-apart copy of ``pattern``."""
    supply = VarSupply.above([atom])
    probe = rename_apart(Clause(pattern), supply).head
    return unify(atom, probe) is not None


def estimate_from_records(records, event: Term) -> Estimate:
    records = list(records)
    n = len(records)
    refs = [r for r in records if r.refuted]
    m = len(refs)
    if m == 0:
        return Estimate(float("nan"), float("nan"), n, 0.0, 0)
    hits = np.array([matches(r.yield_atom, event) for r in refs], dtype=float)
    if refs[0].method == UNIF_CONSTRAINED:
        w = np.array([r.iw for r in refs])
        sw = w.sum()
        value = float((w * hits).sum() / sw)
        se = float(math.sqrt(((w * (hits - value)) ** 2).sum()) / sw)
        ess = float(sw ** 2 / (w ** 2).sum())
    else:
        value = float(hits.mean())
        se = math.sqrt(value * (1 - value) / m)
        ess = float(m)
    return Estimate(value, se, n, ess, m)


def estimate_event(slp: SLP, goal: Sequence[Term], event: Term, n: int, method: str,
                   rng: np.random.Generator, max_depth: int = DEFAULT_MAX_DEPTH) -> Estimate:
    """Probability that a refutation's yield unifies with ``event``.

    Loglinear and backtrackable samples give relative frequencies among
    refutations; unification-constrained samples give the self-normalised
    importance-sampling estimate, which targets the loglinear distribution.
    An estimate with ``refutations == 0`` is undefined (value NaN).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    goal = tuple(goal)
    if len(goal) != 1:
        raise ValueError("events are matched against yields of unit goals")
    return estimate_from_records(sample_many(slp, goal, method, n, rng, max_depth), event)


# ---------------------------------------------------------------------------
# Potentials of given derivations


def unif_sum(slp: SLP, step: Step) -> float:
    """Total label of the clauses whose heads unify with the step's selected atom."""
    d = slp.get(_key(step.atom))
    return math.fsum(c.label for c in d.clauses if unify(step.atom, c.head) is not None)


def psi_u_of(slp: SLP, d: Derivation) -> float:
    out = 1.0
    for s in d.steps:
        if s.label is not None:
            out *= s.label / unif_sum(slp, s)
    return out


def backtrackable_potentials(slp: SLP, goal: Sequence[Term],
                             limits: Limits = Limits()) -> list[tuple[Derivation, float]]:
    """psi^b for every refutation of ``goal``, by exhaustive enumeration.

    The succeeding clauses at each node are read off the set of refutation
    paths, so this is only feasible for small SLD-trees.
    """
    enum = enumerate_derivations(slp, goal, limits)
    if enum.truncated:
        raise ValueError("SLD-tree exceeds the limits; psi^b undetermined")
    refs = enum.refutations
    alive = set()
    for r in refs:
        path = r.clause_path()
        for j in range(len(path) + 1):
            alive.add(path[:j])
    out = []
    for r in refs:
        path = r.clause_path()
        psi_b = 1.0
        for j, s in enumerate(r.steps):
            if s.label is None:
                continue
            d = slp.get(_key(s.atom))
            succ = math.fsum(c.label for c in d.clauses if path[:j] + (c.id,) in alive)
            psi_b *= s.label / succ
        out.append((r, psi_b))
    return out


def analytic_yield_distribution(slp: SLP, goal: Sequence[Term], method: str,
                                limits: Limits = Limits()) -> dict[str, float]:
    """Normalised yield distribution a sampler should converge to (small trees only)."""
    goal = tuple(goal)
    if method == BACKTRACKABLE:
        pairs = backtrackable_potentials(slp, goal, limits)
    else:
        enum = enumerate_derivations(slp, goal, limits, refutations_only=True)
        if enum.truncated:
            raise ValueError("SLD-tree exceeds the limits")
        if method == LOGLINEAR:
            pairs = [(r, r.psi) for r in enum.refutations]
        elif method == UNIF_CONSTRAINED:
            pairs = [(r, psi_u_of(slp, r)) for r in enum.refutations]
        else:
            raise ValueError(f"unknown method {method!r}")
    acc: dict[str, float] = defaultdict(float)
    for r, w in pairs:
        acc[format_term(yield_of(r)) if len(goal) == 1
            else format_goal([r.answer.apply(a) for a in goal])] += w
    z = math.fsum(acc.values())
    return {k: v / z for k, v in acc.items()}


def empirical_yield_distribution(records) -> dict[str, float]:
    counts: dict = defaultdict(int)
    texts: dict = {}
    for r in records:
        if r.refuted:
            a = r.answer
            if a is None or not a.ground:
                counts[r.yield_text()] += 1
                continue
            # ground answers hash structurally, so each distinct yield is printed once
            t = texts.get(a)
            if t is None:
                t = texts[a] = r.yield_text()
            counts[t] += 1
    m = sum(counts.values())
    return {k: c / m for k, c in counts.items()} if m else {}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
