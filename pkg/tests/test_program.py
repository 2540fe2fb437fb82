import pytest
from hypothesis import given, settings, strategies as st

from slpkit import corpus
from slpkit.parser import SLPSyntaxError, parse_goal, parse_term
from slpkit.program import format_slp, parse_slp, validate
from slpkit.terms import format_term


def labels(slp, key):
    return [c.label for c in slp.get(key).clauses]


def test_s1_definitions(S1):
    assert list(slp_key for slp_key in S1.defs) == [("s", 2), ("n", 2), ("v", 2)]
    assert labels(S1, ("s", 2)) == [1.0]
    assert labels(S1, ("n", 2)) == [0.4, 0.6]
    assert labels(S1, ("v", 2)) == [0.3, 0.7]
    assert len(S1.clauses()) == 5
    assert S1.pure


def test_clause_ids_and_log_labels(S1):
    ids = [c.id for c in S1.get(("n", 2)).clauses]
    assert ids == ["n/2#1", "n/2#2"]
    c = S1.get(("n", 2)).clauses[0]
    assert c.log_label == pytest.approx(-0.916290731874155)


def test_empty_source():
    slp = parse_slp("")
    assert slp.defs == {}
    assert validate(slp).ok


def test_mixed_labelling_is_rejected():
    with pytest.raises(SLPSyntaxError) as e:
        parse_slp("0.5: p(a). p(b).")
    assert "mixed labelled/unlabelled predicate p/1" in str(e.value)


def test_syntax_error_has_position():
    with pytest.raises(SLPSyntaxError) as e:
        parse_slp("0.5 : p(a).\n0.5 : p(b\n")
    d = e.value.diagnostics[0]
    assert d.line == 3 and d.col >= 1


def test_negative_label():
    with pytest.raises(SLPSyntaxError):
        parse_slp("-0.5 : p(a). 1.5 : p(b).")


def test_builtin_cannot_be_redefined():
    with pytest.raises(SLPSyntaxError):
        parse_slp("X = X.")


def test_validate_s1(S1):
    rep = validate(S1)
    assert rep.ok and rep.pure
    assert all(s == 1.0 for s in rep.sums.values())


def test_validate_s3():
    rep = validate(corpus.load("S3"))
    assert rep.ok and not rep.pure
    assert rep.unlabelled == ["g/2"]
    for k in ("s/2", "n/2", "v/2", "a/2"):
        assert rep.sums[k] == pytest.approx(1.0, abs=1e-12)


def test_validate_bad_sum():
    rep = validate(parse_slp("0.3 : p(a). 0.6 : p(b)."), tol=1e-9)
    assert not rep.ok
    assert rep.bad_sums == ["p/1"]
    assert rep.sums["p/1"] == pytest.approx(0.9)
    assert any("BAD" in line for line in rep.lines())


def test_validate_undefined():
    rep = validate(parse_slp("1 : p(X) :- q(X), \\+ r(X), X = a."))
    assert rep.undefined == ["q/1", "r/1"]
    assert not rep.ok


def test_renormalized():
    slp = parse_slp("0.3 : p(a). 0.6 : p(b).").renormalized()
    assert labels(slp, ("p", 1)) == pytest.approx([1 / 3, 2 / 3])
    assert validate(slp).ok


def test_zero_labels_are_reported():
    rep = validate(parse_slp("0 : p(a). 1 : p(b)."))
    assert rep.zero_labels == ["p/1#1"]


@pytest.mark.parametrize("name", corpus.names())
def test_corpus_round_trip(name):
    slp = corpus.load(name)
    again = parse_slp(format_slp(slp))
    assert format_slp(again) == format_slp(slp)
    assert again.digest() == slp.digest()


@pytest.mark.parametrize("name", corpus.names())
def test_corpus_validates(name):
    assert validate(corpus.load(name)).ok


def test_parse_negation_and_conjunction():
    g = parse_goal("\\+ \\+ (g(A, G), g(D, G)), n(A, C)")
    assert len(g) == 2
    assert g[0].args[0].functor == "\\+"
    assert g[0].args[0].args[0].functor == ","


def test_parse_numbers_and_quoted_atoms():
    t = parse_term("f(1, 2.5, 'hello world', [a|T])")
    assert format_term(t) == "f(1,2.5,'hello world',[a|A])"


idents = st.from_regex(r"[a-z][a-z0-9_]{0,4}", fullmatch=True)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(idents, st.integers(1, 9)), min_size=1, max_size=4))
def test_generated_fact_programs_round_trip(facts):
    total = sum(w for _, w in facts)
    text = "".join(f"{w / total!r} : p({n}).\n" for n, w in facts)
    slp = parse_slp(text)
    assert validate(slp).ok
    assert parse_slp(format_slp(slp)).digest() == slp.digest()
