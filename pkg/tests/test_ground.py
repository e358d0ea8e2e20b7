"""Grounding tests: the nogood translation against a brute-force substitution oracle."""
from __future__ import annotations

import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_ground

from puzzle2asp.ground import (
    GAtom,
    GroundingError,
    GroundTimeout,
    evaluate_comparison,
    evaluate_term,
    ground_program,
)
from puzzle2asp.syntax import (
    Arith,
    Comparison,
    IntConst,
    StrConst,
    parse_program,
)


def assert_matches_oracle(text: str):
    program = parse_program(text)
    g = ground_program(program)
    facts, choices, nogoods = oracle_ground(program)
    assert g.facts == frozenset(facts)
    assert {(c.rule_index, c.binding, c.candidates, c.k) for c in g.choices} == choices
    assert {n.atoms for n in g.nogoods} == nogoods


# ---------------------------------------------------------------------------
# Fact expansion
# ---------------------------------------------------------------------------


def test_pooled_facts_expand_cartesian():
    g = ground_program(parse_program('p(1; 2, "x"; "y").'))
    assert {a.render() for a in g.facts} == {'p(1,"x")', 'p(1,"y")', 'p(2,"x")', 'p(2,"y")'}


def test_fact_arguments_may_be_arithmetic():
    g = ground_program(parse_program("p(1+1; 6/2)."))
    assert {a.args[0] for a in g.facts} == {2, 3}


def test_duplicate_fact_rows_collapse():
    g = ground_program(parse_program("p(1;1;2).\np(2)."))
    assert len(g.facts) == 2


# ---------------------------------------------------------------------------
# Oracle agreement
# ---------------------------------------------------------------------------


def test_matches_oracle_furniture(corpus):
    assert_matches_oracle(corpus["against_grain"])


def test_matches_oracle_weight_loss(corpus):
    assert_matches_oracle(corpus["weight_loss"])


def test_matches_oracle_shidoku(corpus):
    assert_matches_oracle(corpus["shidoku4"])


def test_matches_oracle_queens(corpus):
    assert_matches_oracle(corpus["queens8"])


def test_matches_oracle_arith_and_tuples():
    assert_matches_oracle(
        "n(1;2;3).\n"
        "{pick(A, B): n(B)}=1 :- n(A).\n"
        "|A1-A2|!=1; B1=B2 :- pick(A1, B1), pick(A2, B2), A1<A2.\n"
        "{(A, B)!=(1, 1); A\\2=0}=1 :- pick(A, B).\n"
        "A*2+B<9 :- pick(A, B).\n"
    )


def test_never_instantiated_choice_leaves_an_empty_extension():
    # The choice body is unsatisfiable, so c/1 has no candidates anywhere;
    # a test rule over it must match zero times rather than blow up.
    text = "d(1;2).\n{c(X): d(X)}=1 :- d(Y), Y>5.\nX=1 :- c(X).\n"
    assert_matches_oracle(text)
    g = ground_program(parse_program(text))
    assert g.choices == ()
    assert g.nogoods == ()


def test_furniture_ground_shape(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    assert len(g.facts) == 9
    assert len(g.choices) == 3
    assert all(c.k == 1 and len(c.candidates) == 9 for c in g.choices)
    assert all(n.atoms for n in g.nogoods)  # nothing is statically violated


# ---------------------------------------------------------------------------
# Arithmetic semantics
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "a,b,quotient,remainder",
    [(7, 2, 3, 1), (-7, 2, -3, -1), (7, -2, -3, 1), (-7, -2, 3, -1)],
)
def test_division_truncates_toward_zero(a, b, quotient, remainder):
    assert evaluate_term(Arith("/", IntConst(a), IntConst(b)), {}) == quotient
    assert evaluate_term(Arith("\\", IntConst(a), IntConst(b)), {}) == remainder


@given(st.integers(-200, 200), st.integers(-20, 20).filter(lambda b: b != 0))
@settings(max_examples=200, deadline=None)
def test_division_identity(a, b):
    q = evaluate_term(Arith("/", IntConst(a), IntConst(b)), {})
    r = evaluate_term(Arith("\\", IntConst(a), IntConst(b)), {})
    assert q * b + r == a
    assert r == 0 or (r > 0) == (a > 0)  # remainder takes the dividend's sign
    assert abs(r) < abs(b)


def test_comparing_unlike_types_is_an_error():
    with pytest.raises(TypeError):
        evaluate_comparison(Comparison(IntConst(1), "=", StrConst("a")), {})


def test_ordering_strings_is_an_error():
    with pytest.raises(TypeError):
        evaluate_comparison(Comparison(StrConst("a"), "<", StrConst("b")), {})


# ---------------------------------------------------------------------------
# Evaluation failures surface as GroundingError with the offending rule
# ---------------------------------------------------------------------------


def test_division_by_zero_names_the_rule():
    with pytest.raises(GroundingError) as info:
        ground_program(parse_program("p(1).\nq(1/0)."))
    assert info.value.rule_index == 1


def test_string_arithmetic_names_the_rule():
    text = 'p("a";"b").\nd(1;2).\n{m(X, Y): d(Y)}=1 :- p(X).\nX+1=2 :- m(X, Y).'
    with pytest.raises(GroundingError) as info:
        ground_program(parse_program(text))
    assert info.value.rule_index == 3
    assert info.value.binding  # carries the offending variable assignment


def test_validation_failure_is_a_grounding_error():
    with pytest.raises(GroundingError):
        ground_program(parse_program("X=Y :- p(X), q(Y)."))


# ---------------------------------------------------------------------------
# Structure of the result
# ---------------------------------------------------------------------------


def test_statically_violated_rule_yields_empty_nogood():
    g = ground_program(parse_program("p(1;2).\nq(5;6).\nX=Y :- p(X), q(Y)."))
    assert any(not n.atoms for n in g.nogoods)


def test_candidates_sort_integers_before_strings():
    g = ground_program(parse_program('v("a"; 1).\nd(1).\n{q(V): v(V)}=1 :- d(X).'))
    (choice,) = g.choices
    assert [a.render() for a in choice.candidates] == ["q(1)", 'q("a")']


def test_dump_golden():
    text = "d(1;2).\n{p(X): d(X)}=1 :- d(X).\nX<Y :- p(X), p(Y), X!=Y.\n"
    expected = (
        "FACT d(1)\n"
        "FACT d(2)\n"
        "CHOICE k=1 [p(1)]\n"
        "CHOICE k=1 [p(2)]\n"
        "NOGOOD [p(1), p(2)]\n"
    )
    assert ground_program(parse_program(text)).dump() == expected


def test_choice_body_variable_joins_into_conditions():
    # X is bound by the body, so each instantiation offers a single candidate.
    g = ground_program(parse_program("d(1;2).\n{p(X): d(X)}=1 :- d(X)."))
    assert [c.candidates for c in g.choices] == [
        (GAtom("p", (1,)),),
        (GAtom("p", (2,)),),
    ]


def test_deterministic_across_runs(corpus):
    first = ground_program(parse_program(corpus["foodie"])).dump()
    second = ground_program(parse_program(corpus["foodie"])).dump()
    assert first == second


def test_expired_deadline_raises(corpus):
    program = parse_program(corpus["sudoku9"])
    with pytest.raises(GroundTimeout):
        ground_program(program, deadline=time.monotonic() - 1.0)
