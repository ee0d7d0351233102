from __future__ import annotations

import json
import time
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopreg.structure import (
    CONVENTIONS,
    GenerationTimeout,
    StructureIndex,
    StructureTooLarge,
    count_negative,
    count_with,
    dims_table,
    generate,
    sector_closure_check,
)
from loopreg.symbolic import ZERO, Degree, parse_tree, planted, IPRIME, ZERO_MI

from oracles import convention_counts, is_w, naive_structure

GOLDEN = json.loads((Path(__file__).parent / "data" / "dims_golden.json").read_text())


def D(q) -> Degree:
    return Degree(Fraction(q))


@pytest.fixture(scope="module")
def w1():
    return generate(1, D(1))


def test_small_examples():
    idx = generate(1, ZERO)
    for text in ["Xi(1)", "I'(Xi(1))", "I'(Xi(1))*I'(Xi(1))", "Xi(1)*I(Xi(1))"]:
        tau = parse_tree(text)
        assert tau in idx
        assert tau.degree < ZERO
    # a noise never shares a root with a derivative factor, and at most two I' per root
    for text in ["Xi(1)*I'(Xi(1))", "I'(Xi(1))*I'(Xi(1))*I'(Xi(1))"]:
        assert parse_tree(text) not in idx


def test_u_and_uprime_inside_w(w1):
    assert w1.in_u and w1.in_uprime
    assert w1.in_u <= set(w1.basis) and w1.in_uprime <= set(w1.basis)


def test_degrees_within_cutoff_and_strata(w1):
    for deg, positions in w1.strata.items():
        assert deg <= w1.gamma_max
        for p in positions:
            assert w1.basis[p].degree == deg


def test_closed_under_rules(w1):
    # planting any element of degree low enough stays inside
    for tau in w1.basis:
        for lab in (ZERO_MI, IPRIME):
            p = planted(lab, tau)
            if p is not None and p.degree <= w1.gamma_max:
                assert p in w1


def test_membership_predicate_accepts_everything(w1):
    assert all(is_w(t, closure=True) for t in w1.basis)


def test_monotone_in_cutoff():
    small = set(generate(1, D("1/2")).basis)
    large = set(generate(1, D(1)).basis)
    assert small <= large


def test_deterministic_order():
    assert generate(2, ZERO).basis == generate(2, ZERO).basis


def test_matches_naive_fixpoint_m1():
    for closure in (True, False):
        assert set(generate(1, D("1/2"), closure=closure).basis) == naive_structure(1, D("1/2"), closure)


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_golden_counts(key):
    m = int(key.split(";")[0][2:])
    closure = key.endswith("closure")
    idx = generate(m, ZERO, closure=closure)
    assert len(idx) == GOLDEN[key]["size"]
    assert count_negative(idx) == GOLDEN[key]["negative"]


def test_dims_table_matches_golden():
    rows = dict(dims_table())
    for key, entry in GOLDEN.items():
        for conv, n in entry["negative"].items():
            assert rows[f"{key};{conv}"] == n


def test_noise_shape_counts_agree_between_m1_and_m2():
    for closure in (True, False):
        a = count_negative(generate(1, ZERO, closure=closure), ("b",))
        b = count_negative(generate(2, ZERO, closure=closure), ("b",))
        assert a == b


def test_convention_counter_agrees_with_oracle():
    idx = generate(2, ZERO)
    assert count_negative(idx) == convention_counts(idx.basis)


def test_unknown_convention_rejected():
    with pytest.raises(ValueError):
        count_with([], "b+e")


def test_negative_cutoff_rejected_for_counting():
    with pytest.raises(ValueError):
        count_negative(generate(1, D("-1/2")))


def test_budget_and_deadline():
    with pytest.raises(StructureTooLarge):
        generate(2, D("3/2"), budget=100)
    with pytest.raises(GenerationTimeout):
        generate(2, D("3/2"), budget=10**7, deadline=time.monotonic())


def test_json_round_trip(w1):
    back = StructureIndex.from_json(json.loads(json.dumps(w1.to_json())))
    assert back.basis == w1.basis
    assert back.in_u == w1.in_u and back.in_uprime == w1.in_uprime


def test_sector_closure(w1):
    report = sector_closure_check(w1)
    assert report.checked == len(w1)
    assert report.ok


def test_plain_rules_fail_sector_closure():
    # without X^k closure the recentering produces left factors outside W
    report = sector_closure_check(generate(1, D(1), closure=False))
    assert not report.ok


@given(st.sampled_from(["-1", "-1/2", "0", "1/2", "1"]), st.integers(1, 2))
@settings(max_examples=10, deadline=None)
def test_every_stratum_is_finite_and_sorted(cut, m):
    idx = generate(m, D(cut))
    degrees = [t.degree for t in idx.basis]
    assert degrees == sorted(degrees)
    assert all(t.degree <= D(cut) for t in idx.basis)


def test_conventions_listed():
    assert CONVENTIONS[0] == "none" and len(CONVENTIONS) == 8
