"""Model enumeration tests, checked against a generate-and-test oracle."""
from __future__ import annotations

import time

import pytest

from oracles import oracle_models

from puzzle2asp.ground import GAtom, ground_program
from puzzle2asp.solve import (
    SolveTimeout,
    check_model,
    enumerate_models,
    render_models,
)
from puzzle2asp.syntax import parse_program

QUEENS4 = (
    "index_of_row(1;2;3;4).\n"
    "index_of_column(1;2;3;4).\n"
    "{assign(Ir, Ic): index_of_column(Ic)}=1 :- index_of_row(Ir).\n"
    "{Ic1=Ic2}=0 :- assign(Ir1, Ic1), assign(Ir2, Ic2), Ir1!=Ir2.\n"
    "{|Ir1-Ir2|=|Ic1-Ic2|}=0 :- assign(Ir1, Ic1), assign(Ir2, Ic2), Ir1!=Ir2.\n"
)


# ---------------------------------------------------------------------------
# Reference implementation: brute force over per-choice selections
# ---------------------------------------------------------------------------


def solve_text(text: str, **kwargs):
    return enumerate_models(ground_program(parse_program(text)), **kwargs)


def assert_matches_oracle(text: str):
    g = ground_program(parse_program(text))
    result = enumerate_models(g, limit=None)
    assert result.exhausted
    assert {frozenset(m.atoms) for m in result.models} == oracle_models(g)
    assert len({frozenset(m.atoms) for m in result.models}) == len(result.models)


# ---------------------------------------------------------------------------
# Known puzzles
# ---------------------------------------------------------------------------


def test_furniture_unique_model(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    result = enumerate_models(g, limit=None)
    assert result.exhausted
    assert len(result.models) == 1
    chosen = {a.render() for a in result.models[0].atoms if a.predicate == "match"}
    assert chosen == {
        'match("Bonita",325,"poplar")',
        'match("Tabitha",225,"ash")',
        'match("Yvette",275,"sandalwood")',
    }
    assert {frozenset(m.atoms) for m in result.models} == oracle_models(g)


def test_four_queens_has_two_models():
    g = ground_program(parse_program(QUEENS4))
    result = enumerate_models(g, limit=None)
    assert len(result.models) == 2
    assert {frozenset(m.atoms) for m in result.models} == oracle_models(g)


def test_matches_oracle_weight_loss(corpus):
    assert_matches_oracle(corpus["weight_loss"])


def test_matches_oracle_overlapping_choices():
    # Both choice instances range over the same candidates; selections must agree.
    assert_matches_oracle("d(1;2).\ne(1;2;3).\n{p(E): e(E)}=1 :- d(X).")


def test_matches_oracle_multi_model():
    assert_matches_oracle(
        "n(1;2;3).\n{p(A): n(A)}=2 :- n(1).\nA1+A2!=5 :- p(A1), p(A2), A1<A2.\n"
    )


# ---------------------------------------------------------------------------
# Cardinality edge cases
# ---------------------------------------------------------------------------


def test_choice_of_zero_forces_all_false():
    result = solve_text("d(1;2).\n{p(X): d(X)}=0 :- d(1).", limit=None)
    assert len(result.models) == 1
    assert all(a.predicate == "d" for a in result.models[0].atoms)


def test_choice_covering_all_candidates_forces_all_true():
    result = solve_text("d(1;2).\n{p(X): d(X)}=2 :- d(1).", limit=None)
    assert len(result.models) == 1
    assert GAtom("p", (1,)) in result.models[0].atoms
    assert GAtom("p", (2,)) in result.models[0].atoms


def test_infeasible_cardinality_has_no_models():
    result = solve_text("d(1;2).\n{p(X): d(X)}=3 :- d(1).", limit=None)
    assert result.models == []
    assert result.exhausted


def test_statically_violated_program_has_no_models():
    result = solve_text("p(1;2).\nq(5;6).\nX=Y :- p(X), q(Y).", limit=None)
    assert result.models == []
    assert result.exhausted


# ---------------------------------------------------------------------------
# Enumeration contract
# ---------------------------------------------------------------------------


def test_limit_yields_a_prefix():
    g = ground_program(parse_program(QUEENS4))
    full = enumerate_models(g, limit=None)
    for limit in (1, 2, 3):
        partial = enumerate_models(g, limit=limit)
        expect = [frozenset(m.atoms) for m in full.models][:limit]
        assert [frozenset(m.atoms) for m in partial.models] == expect


def test_limit_one_on_two_model_program_is_not_exhausted():
    g = ground_program(parse_program(QUEENS4))
    assert enumerate_models(g, limit=1).exhausted is False


def test_limit_must_be_positive():
    g = ground_program(parse_program("d(1)."))
    with pytest.raises(ValueError):
        enumerate_models(g, limit=0)


def test_deterministic_output(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    first = render_models(enumerate_models(g, limit=None))
    second = render_models(enumerate_models(g, limit=None))
    assert first == second
    assert first.endswith("MODELS 1 EXHAUSTED true\n")


def test_stats_are_populated(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    result = enumerate_models(g, limit=None)
    assert result.stats.decisions > 0
    assert result.stats.propagations > 0
    assert result.stats.elapsed_s >= 0.0


def test_expired_deadline_raises(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    with pytest.raises(SolveTimeout):
        enumerate_models(g, limit=None, deadline=time.monotonic() - 1.0)


# ---------------------------------------------------------------------------
# Model checking
# ---------------------------------------------------------------------------


def test_check_model_accepts_solver_output(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    result = enumerate_models(g, limit=None)
    assert check_model(g, result.models[0].atoms)


def test_check_model_rejects_missing_fact(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    model = set(enumerate_models(g, limit=None).models[0].atoms)
    model.discard(GAtom("price", (225,)))
    verdict = check_model(g, model)
    assert not verdict.ok
    assert "missing fact" in verdict.violation


def test_check_model_rejects_wrong_cardinality(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    model = set(enumerate_models(g, limit=None).models[0].atoms)
    model.discard(GAtom("match", ("Tabitha", 225, "ash")))
    verdict = check_model(g, model)
    assert not verdict.ok
    assert "choice" in verdict.violation


def test_check_model_rejects_unknown_atom(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    model = set(enumerate_models(g, limit=None).models[0].atoms)
    model.add(GAtom("match", ("Nobody", 999, "teak")))
    verdict = check_model(g, model)
    assert not verdict.ok
    assert "unknown atom" in verdict.violation


def test_check_model_reports_violated_nogood(corpus):
    g = ground_program(parse_program(corpus["against_grain"]))
    model = set(enumerate_models(g, limit=None).models[0].atoms)
    model.discard(GAtom("match", ("Bonita", 325, "poplar")))
    model.discard(GAtom("match", ("Tabitha", 225, "ash")))
    model.add(GAtom("match", ("Bonita", 225, "poplar")))
    model.add(GAtom("match", ("Tabitha", 325, "ash")))
    verdict = check_model(g, model)
    assert not verdict.ok  # Bonita must pay 325
