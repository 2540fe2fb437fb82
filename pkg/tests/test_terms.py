import pytest
from hypothesis import given, settings, strategies as st

import oracles
from slpkit.parser import parse_term
from slpkit.terms import (
    Clause, Const, Struct, Substitution, Var, VarSupply, apply, canonical_key, compose,
    format_term, list_items, make_list, rename_apart, term_vars, unify, variant,
)

X, Y, Z = Var(0, "X"), Var(1, "Y"), Var(2, "Z")
a, b = Const("a"), Const("b")


def f(*args):
    return Struct("f", args)


# -- strategies

consts = st.sampled_from([Const("a"), Const("b"), Const("[]")])
variables = st.integers(0, 4).map(Var)
terms = st.recursive(
    consts | variables,
    lambda sub: st.builds(lambda fn, args: Struct(fn, args),
                          st.sampled_from(["f", "g"]), st.lists(sub, min_size=1, max_size=3)),
    max_leaves=8,
)
ground_terms = st.recursive(
    consts,
    lambda sub: st.builds(lambda fn, args: Struct(fn, args),
                          st.sampled_from(["f", "g", "."]), st.lists(sub, min_size=1, max_size=2)),
    max_leaves=8,
)


def subst_strategy():
    return st.dictionaries(variables, terms, max_size=3)


# -- unify examples

def test_unify_var_const():
    assert unify(X, a) == {X: a}


def test_unify_symmetric_decomposition():
    assert unify(f(X, b), f(a, Y)) == {X: a, Y: b}


def test_unify_distinct_constants():
    assert unify(a, b) is None


def test_occurs_check():
    assert unify(X, f(X)) is None


def test_occurs_check_can_be_disabled():
    s = unify(X, f(X), occurs_check=False)
    assert s is not None and s[X] == f(X)


def test_compose_rejects_cyclic_result():
    with pytest.raises(ValueError):
        compose({X: f(Y)}, {Y: X})


def test_arity_clash():
    assert unify(f(X), f(X, Y)) is None


# -- apply / compose examples

def test_apply_examples():
    assert apply({X: a}, f(X, Y)) == f(a, Y)
    assert apply({}, f(X, Y)) == f(X, Y)
    assert apply({X: Struct("g", [Y])}, f(X)) == f(Struct("g", [Y]))


def test_compose_examples():
    assert compose({X: Y}, {Y: a}) == {X: a, Y: a}
    s = Substitution({X: f(Y)})
    assert compose({}, s) == s
    assert compose({X: a}, {Y: b}) == {X: a, Y: b}


def test_substitution_drops_identity_bindings():
    assert len(Substitution({X: X, Y: a})) == 1


# -- properties

@settings(max_examples=300, deadline=None)
@given(terms, terms)
def test_unify_agrees_with_oracle(t1, t2):
    mine = unify(t1, t2)
    ref = oracles.unify(oracles.to_plain(t1), oracles.to_plain(t2))
    assert (mine is None) == (ref is None)
    if mine is not None:
        assert mine.apply(t1) == mine.apply(t2)
        # both are most general, so their instances agree up to renaming
        ref_t = oracles.from_plain(oracles.resolve(oracles.to_plain(t1), ref))
        assert variant(mine.apply(t1), ref_t)


@settings(max_examples=200, deadline=None)
@given(terms, terms)
def test_mgu_is_idempotent(t1, t2):
    s = unify(t1, t2)
    if s is not None:
        assert s.is_idempotent()
        assert s.apply(s.apply(t1)) == s.apply(t1)


@settings(max_examples=200, deadline=None)
@given(terms, terms, ground_terms)
def test_mgu_generality(t1, t2, t3):
    """Any unifier of t1, t2 factors through the mgu."""
    s = unify(t1, t2)
    if s is None:
        return
    # build another unifier by further instantiating the mgu
    other = compose(s, Substitution({v: t3 for v in term_vars(s.apply(t1))[:1]}))
    inst = other.apply(t1)
    assert other.apply(t2) == inst
    assert unify(s.apply(t1), inst) is not None


@settings(max_examples=200, deadline=None)
@given(subst_strategy(), subst_strategy(), terms)
def test_compose_law(s1, s2, t):
    s1 = Substitution({v: u for v, u in s1.items() if v not in term_vars(u)})
    s2 = Substitution({v: u for v, u in s2.items() if v not in term_vars(u)})
    # the law holds when s2 does not touch variables bound by s1
    s2 = Substitution({v: u for v, u in s2.items()
                       if v not in s1 and not set(term_vars(u)) & set(s1)})
    s1 = Substitution({v: s1[v] for v in s1})
    if not s1.is_idempotent() or not s2.is_idempotent():
        return
    assert compose(s1, s2).apply(t) == s2.apply(s1.apply(t))


@settings(max_examples=200, deadline=None)
@given(terms)
def test_format_parse_round_trip(t):
    text = format_term(t)
    back = parse_term(text)
    assert variant(back, t)
    assert format_term(back) == text


@settings(max_examples=100, deadline=None)
@given(ground_terms)
def test_ground_terms_are_flagged(t):
    assert t.ground
    assert canonical_key(t) == canonical_key(parse_term(format_term(t)))


def test_canonical_key_identifies_variants():
    assert variant(f(X, Y, X), f(Y, Z, Y))
    assert not variant(f(X, Y), f(X, X))
    assert canonical_key((f(X), f(Y))) != canonical_key((f(X), f(X)))


def test_lists():
    t = make_list([a, b], X)
    assert format_term(t) == "[a,b|A]"
    assert list_items(t) == ([a, b], X)
    assert format_term(make_list([])) == "[]"


# -- renaming

def test_rename_apart_twice_gives_disjoint_variants():
    c = Clause(Struct("p", [X]), (Struct("q", [X]),))
    supply = VarSupply(10)
    c1, c2 = rename_apart(c, supply), rename_apart(c, supply)
    v1 = set(term_vars(c1.head)) | {v for t in c1.body for v in term_vars(t)}
    v2 = set(term_vars(c2.head)) | {v for t in c2.body for v in term_vars(t)}
    assert not v1 & v2
    assert variant(Struct("c", [c1.head, *c1.body]), Struct("c", [c.head, *c.body]))


def test_rename_ground_clause_is_unchanged():
    c = Clause(Struct("p", [a]), (), "p/1#0", 0.5)
    r = rename_apart(c, VarSupply(0))
    assert r.head == c.head and r.body == () and r.label == 0.5


@pytest.mark.parametrize("goal", ["p(a)", "p(b)", "p(X)", "p(f(X))", "p(f(a))", "q(a)"])
def test_renamed_clause_unifies_like_original(goal):
    c = Clause(parse_term("p(f(Y))"))
    g = parse_term(goal)
    r = rename_apart(c, VarSupply(100))
    assert (unify(g, c.head) is None) == (unify(g, r.head) is None)
