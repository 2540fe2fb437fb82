import math
import random
from collections import Counter

import pytest

import oracles
from slpkit import corpus
from slpkit.parser import parse_goal, parse_term
from slpkit.program import parse_slp
from slpkit.resolution import (
    Limits, Status, call_impure, choices_of, computed_answer, enumerate_derivations,
    format_trace, refutations, replay, resolve_step, rightmost, yield_of,
)
from slpkit.terms import VarSupply, format_goal, format_subst, format_term, make_list, variant


def yields(refs):
    return Counter(format_term(yield_of(r)) for r in refs)


# -- single steps

def test_resolve_step_s1(S1):
    goal = parse_goal("s(A, [])")
    c = S1.get(("s", 2)).clauses[0]
    nxt, theta = resolve_step(goal, 0, c, VarSupply.above(goal))
    assert format_goal(nxt) == "n(A,B), v(B,C), n(C,[])"


def test_resolve_step_clash(S1):
    goal = parse_goal("n([joe|T], U)")
    kim = S1.get(("n", 2)).clauses[1]
    assert resolve_step(goal, 0, kim, VarSupply.above(goal)) is None


def test_resolve_step_fact(pq):
    goal = parse_goal("p(a)")
    nxt, theta = resolve_step(goal, 0, pq.get(("p", 1)).clauses[0], VarSupply.above(goal))
    assert nxt == () and len(theta.restrict([])) == 0


# -- enumeration

def test_s1_has_eight_refutations(S1):
    refs = refutations(S1, parse_goal("s(A, [])"))
    assert len(refs) == 8
    assert math.fsum(r.psi for r in refs) == pytest.approx(1.0, abs=1e-12)


def test_s2_has_four_refutations(S2):
    refs = refutations(S2, parse_goal("s(A, [])"))
    assert len(refs) == 4
    assert sorted(round(r.psi, 12) for r in refs) == [0.048, 0.108, 0.112, 0.252]


def test_pq_answers(pq):
    refs = refutations(pq, parse_goal("p(X)"))
    assert [format_subst(r.answer, canonical=True) for r in refs] == ["{A/a}", "{A/b}"]


def test_enumeration_records_failures(S2):
    enum = enumerate_derivations(S2, parse_goal("s(A, [])"))
    statuses = Counter(d.status for d in enum)
    assert statuses[Status.REFUTED] == 4
    # a mismatched second noun fails before the verb is chosen
    assert statuses[Status.FAILED] == 2
    failed = [d.psi for d in enum if d.status is Status.FAILED]
    assert math.fsum(failed) == pytest.approx(0.48, abs=1e-12)
    assert math.fsum(d.psi for d in enum) == pytest.approx(1.0, abs=1e-12)


def test_depth_limit_truncates(S1):
    enum = enumerate_derivations(S1, parse_goal("s(A, [])"), Limits(max_depth=2))
    assert enum.truncated
    assert all(d.status is Status.DEPTH for d in enum if not d.refuted)


def test_max_solutions(S1):
    enum = enumerate_derivations(S1, parse_goal("s(A, [])"), Limits(max_solutions=3),
                                 refutations_only=True)
    assert len(enum.refutations) == 3 and enum.truncated


def test_derivation_invariants(S2):
    for d in enumerate_derivations(S2, parse_goal("s(A, [])")):
        assert d.refuted == (d.goal == ())
        prod = math.prod(S2.clause(cid).label ** k for cid, k in d.counts.items())
        assert d.psi == pytest.approx(prod)
        for s in d.steps:
            assert s.atom == s.goal[s.selected]


# -- answers and yields

def test_computed_answer_joe_sees_kim(S1):
    refs = refutations(S1, parse_goal("s(A, [])"))
    r = next(r for r in refs if format_term(yield_of(r)) == "s([joe,sees,kim],[])")
    ans = computed_answer(r)
    assert format_subst(ans, canonical=True) == "{A/[joe,sees,kim]}"
    assert ans == r.answer


def test_ground_goal_answer_is_empty(pq):
    (r,) = refutations(pq, parse_goal("p(a)"))
    assert len(computed_answer(r)) == 0
    assert yield_of(r) == parse_term("p(a)")


def test_conjunctive_answer(pq):
    refs = refutations(pq, parse_goal("p(X), q(Y)"))
    answers = [format_subst(r.answer, canonical=True) for r in refs]
    assert "{A/a, B/b}" in answers and len(answers) == 4


def test_yield_keeps_unbound_variables():
    slp = parse_slp("1 : r(x, y, f(V)).")
    (r,) = refutations(slp, parse_goal("r(X, Y, W)"))
    assert variant(yield_of(r), parse_term("r(x, y, f(V))"))


def test_s5_yield_is_a_network():
    slp = corpus.load("S5")
    refs = refutations(slp, parse_goal("model([a, s], Net)"), Limits(max_depth=200))
    ys = sorted(yields(refs))
    assert ys == ["model([a,s],[])", "model([a,s],[e(a,s)])", "model([a,s],[e(s,a)])"]


def test_s5_rejects_cycles():
    slp = corpus.load("S5")
    refs = refutations(slp, parse_goal("model([a, s, t], Net)"), Limits(max_depth=300))
    # 25 labelled DAGs on three nodes
    assert len(yields(refs)) == 25


# -- impure calls

def test_call_impure_first_binding():
    s3 = corpus.load("S3")
    ans = call_impure(s3, parse_goal("g([il|T], G)"))
    assert [format_term(t) for t in ans.values()] == ["m"]


def test_negation_as_failure(pq):
    ans = call_impure(pq, parse_goal("\\+ p(c)"))
    assert ans is not None and len(ans) == 0
    assert call_impure(pq, parse_goal("\\+ p(a)")) is None


def test_double_negation_binds_nothing():
    s3 = corpus.load("S3_underconstrained")
    goal = parse_goal("\\+ \\+ (g(A, G), g(D, G))")
    ans = call_impure(s3, goal)
    assert ans is not None and len(ans) == 0


# -- computation rule and oracle agreement

@pytest.mark.parametrize("name,goal", [("S1", "s(A, [])"), ("S2", "s(A, [])"),
                                       ("pq", "p(X), q(Y)"), ("pq", "p(X), q(X)")])
def test_refutations_independent_of_computation_rule(name, goal):
    slp = corpus.load(name)
    g = parse_goal(goal)
    left = refutations(slp, g)
    right = enumerate_derivations(slp, g, select=rightmost, refutations_only=True).refutations

    def key(rs):
        return sorted((format_goal([r.answer.apply(a) for a in g]), round(r.psi, 12)) for r in rs)

    assert key(left) == key(right)


@pytest.mark.parametrize("seed", range(30))
def test_enumeration_matches_oracle(seed):
    rng = random.Random(seed)
    text = oracles.random_program(rng)
    slp = parse_slp(text)
    goal = parse_goal(oracles.random_goal_text(rng, text))
    mine = sorted((format_goal([r.answer.apply(a) for a in goal]), round(r.psi, 12))
                  for r in refutations(slp, goal))
    ref = sorted((format_goal([oracles.from_plain(a) for a in inst]), round(p, 12))
                 for p, inst in oracles.sld_refutations(slp, goal))
    assert mine == ref


def test_replay_reproduces_derivations(S2):
    g = parse_goal("s(A, [])")
    for d in enumerate_derivations(S2, g):
        r = replay(S2, g, choices_of(d), d.status)
        assert r.clause_path() == d.clause_path()
        assert r.goal == d.goal
        if d.refuted:
            assert yield_of(r) == yield_of(d)


def test_replay_through_deterministic_steps():
    s3 = corpus.load("S3")
    g = parse_goal("s(A, [])")
    for d in enumerate_derivations(s3, g):
        r = replay(s3, g, choices_of(d), d.status)
        assert r.clause_path() == d.clause_path()


def test_format_trace_mentions_each_step(S1):
    (r, *_) = refutations(S1, parse_goal("s(A, [])"))
    text = format_trace(r)
    assert text.count("\n") >= r.depth - 1
    assert "s/2#1" in text
