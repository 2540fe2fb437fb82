"""Exact inference over pure SLPs: goal weights and yield distributions.

The weight ``Z`` of a goal is the sum of the potentials of its
refutations.  It is computed by summing out the input clause of the
leftmost atom, memoised on goals up to variable renaming, with goals that
fall apart into variable-disjoint groups evaluated as a product.  An
optional mode splits indecomposable goals on their shared variables.
"""

from __future__ import annotations

import math
import sys
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .program import SLP
from .resolution import DEFAULT_LIMITS, Limits, enumerate_derivations, yield_of
from .terms import (
    Substitution, Term, VarSupply, atom_key, canonical_key, format_goal,
    format_term, goal_vars, term_vars, unify,
)

UNIFY = ("=", 2)


class WeightUndetermined(RuntimeError):
    """The SLD-tree could not be exhausted within the depth limit."""


class UnsupportedError(ValueError):
    """Exact inference is defined for pure SLPs (plus ``=/2``) only."""


class ThetaUndetermined(WeightUndetermined):
    """No finite set of ground splitting substitutions was found."""


def decompose(goal: Sequence[Term]) -> list[tuple[Term, ...]]:
    """Finest partition of ``goal`` into groups that share no variables.

    Groups are ordered by their first atom and keep the goal's atom order.
    """
    goal = tuple(goal)
    parent = list(range(len(goal)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict = {}
    for i, a in enumerate(goal):
        for v in term_vars(a):
            j = owner.setdefault(v, i)
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list] = {}
    for i, a in enumerate(goal):
        groups.setdefault(find(i), []).append(a)
    return [tuple(g) for g in groups.values()]


class WeightEvaluator:
    """Computes goal weights for one SLP, sharing a memo across queries.

    ``evaluations`` counts, per canonical goal, how many times its weight
    was actually computed (memo hits are not counted).  With
    ``approx_depth`` set, branches deeper than that are dropped and the
    result is a lower bound; ``truncated`` records whether anything was cut.
    """

    def __init__(self, slp: SLP, limits: Limits = DEFAULT_LIMITS, *, memo: bool = True,
                 decompose: bool = True, split: bool = False,
                 approx_depth: Optional[int] = None):
        self.slp = slp
        self.limits = limits
        self.use_memo = memo
        self.use_decompose = decompose
        self.use_split = split
        self.approx_depth = approx_depth
        self.memo: dict = {}
        self.evaluations: Counter = Counter()
        self.truncated = False

    def weight(self, goal: Sequence[Term]) -> float:
        goal = tuple(goal)
        bound = self.approx_depth if self.approx_depth is not None else self.limits.max_depth
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 8 * bound + 200))
        try:
            return self._z(goal, bound)
        finally:
            sys.setrecursionlimit(old)

    def evaluation_count(self, goal: Sequence[Term]) -> int:
        return self.evaluations[canonical_key(tuple(goal))]

    # -- recursion

    def _z(self, goal: tuple, remaining: int) -> float:
        if not goal:
            return 1.0
        key = canonical_key(goal)
        mkey = key if self.approx_depth is None else (key, remaining)
        if self.use_memo and mkey in self.memo:
            return self.memo[mkey]
        self.evaluations[key] += 1
        z = self._compute(goal, remaining)
        if self.use_memo:
            self.memo[mkey] = z
        return z

    def _compute(self, goal: tuple, remaining: int) -> float:
        if self.use_decompose and len(goal) > 1:
            groups = decompose(goal)
            if len(groups) > 1:
                z = 1.0
                for g in groups:
                    z *= self._z(g, remaining)
                    if z == 0.0:
                        break
                return z
            if self.use_split:
                try:
                    return self._split(goal, remaining)
                except ThetaUndetermined:
                    pass
        return self._sum_out(goal, remaining)

    def _sum_out(self, goal: tuple, remaining: int) -> float:
        if remaining <= 0:
            if self.approx_depth is not None:
                self.truncated = True
                return 0.0
            raise WeightUndetermined(
                f"depth limit {self.limits.max_depth} reached under {format_goal(goal)}")
        a, rest = goal[0], goal[1:]
        k = atom_key(a)
        oc = self.limits.occurs_check
        if k == UNIFY:
            theta = unify(a.args[0], a.args[1], oc)
            if theta is None:
                return 0.0
            return self._z(tuple(theta.apply(b) for b in rest), remaining - 1)
        d = self.slp.get(k)
        if d is None:
            if k == ("\\+", 1):
                raise UnsupportedError("negation is not supported by exact inference")
            return 0.0
        if not d.labelled:
            raise UnsupportedError(f"unlabelled predicate {k[0]}/{k[1]} in exact inference")
        supply = VarSupply.above(goal)
        total = 0.0
        for c in d.clauses:
            if not c.label:
                continue
            head, body = c.renamed(supply)
            theta = unify(a, head, oc)
            if theta is None:
                continue
            nxt = tuple(theta.apply(b) for b in body + rest)
            total += c.label * self._z(nxt, remaining - 1)
        return total

    def _split(self, goal: tuple, remaining: int) -> float:
        g1, g2 = goal[:1], goal[1:]
        thetas = splitting_substitutions(self.slp, g1, g2, self.limits)
        return math.fsum(self._z(tuple(t.apply(a) for a in g1), remaining)
                         * self._z(tuple(t.apply(a) for a in g2), remaining)
                         for t in thetas)


def weight(slp: SLP, goal: Sequence[Term], limits: Limits = DEFAULT_LIMITS, **options) -> float:
    """Weight of ``goal``: the summed potential of its refutations."""
    return WeightEvaluator(slp, limits, **options).weight(goal)


def weight_lower_bound(slp: SLP, goal: Sequence[Term], depth: int,
                       limits: Limits = DEFAULT_LIMITS) -> tuple[float, bool]:
    """Weight of the refutations no longer than ``depth`` steps, and whether any were cut."""
    ev = WeightEvaluator(slp, limits, approx_depth=depth)
    z = ev.weight(goal)
    return z, ev.truncated


def splitting_substitutions(slp: SLP, g1: Sequence[Term], g2: Sequence[Term],
                            limits: Limits = DEFAULT_LIMITS) -> list[Substitution]:
    """Ground substitutions over the shared variables of ``g1`` and ``g2``.

    The set is the distinct computed answers of the joint goal restricted to
    the shared variables, so it contains every answer by construction and
    its members bind the shared variables to different ground terms.
    """
    g1, g2 = tuple(g1), tuple(g2)
    shared = [v for v in goal_vars(g1) if v in set(goal_vars(g2))]
    if not shared:
        raise ValueError("goals share no variables; use the product rule")
    enum = enumerate_derivations(slp, g1 + g2, limits, refutations_only=True)
    if enum.truncated:
        raise ThetaUndetermined("joint goal exceeds the limits")
    seen: dict = {}
    for r in enum.refutations:
        ans = r.answer
        theta = Substitution({v: ans.apply(v) for v in shared})
        if not all(t.ground for t in theta.values()):
            raise ThetaUndetermined("a computed answer leaves a shared variable non-ground")
        seen.setdefault(tuple(theta[v] for v in shared), theta)
    return [seen[k] for k in sorted(seen, key=lambda k: [format_term(t) for t in k])]


# ---------------------------------------------------------------------------
# Yield distributions


@dataclass
class YieldDistribution:
    support: list[tuple[Term, float]]
    z: float
    numerators: list[float] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {format_term(y): p for y, p in self.support}

    def probability(self, atom: Term) -> float:
        key = canonical_key(atom)
        for y, p in self.support:
            if canonical_key(y) == key:
                return p
        return 0.0

    def __len__(self):
        return len(self.support)

    def __iter__(self):
        return iter(self.support)


def yield_distribution(slp: SLP, goal: Sequence[Term], limits: Limits = DEFAULT_LIMITS,
                       evaluator: Optional[WeightEvaluator] = None) -> YieldDistribution:
    """Distribution over the yields of a unit goal.

    The support is read off the goal's refutations.  When every yield is
    ground each probability is ``weight(<- y) / weight(goal)``.  Non-ground
    yields can subsume one another, so there the numerator is the summed
    potential of the refutations whose yields are variants of ``y``.
    """
    goal = tuple(goal)
    if len(goal) != 1:
        raise ValueError("yield distributions are defined for unit goals")
    ev = evaluator or WeightEvaluator(slp, limits)
    z = ev.weight(goal)
    enum = enumerate_derivations(slp, goal, limits, refutations_only=True)
    if enum.truncated:
        raise WeightUndetermined("refutations exceed the limits")
    if z <= 0:
        raise ValueError(f"{format_goal(goal)} has no refutations of positive weight")
    order: dict = {}
    psi_sums: Counter = Counter()
    for r in enum.refutations:
        y = yield_of(r)
        key = canonical_key(y)
        order.setdefault(key, y)
        psi_sums[key] += r.psi
    if all(y.ground for y in order.values()):
        nums = {k: ev.weight((y,)) for k, y in order.items()}
    else:
        nums = dict(psi_sums)
    support = [(y, nums[k] / z) for k, y in order.items() if nums[k] > 0]
    return YieldDistribution(support, z, [nums[k] for k, y in order.items() if nums[k] > 0])
