import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from phasetime.phases import (FULL, GROUPS, SEMI, LocalPhase, TransitionPolicy, build_mapping,
                              generate_generalized_phases, parse_policy, successors, transition_count)

from conftest import fixture, one_intersection, main_vehicle


def locals_for(counts, gmin=5, gmax=50, yellow=4, allred=3):
    return {
        f"I{i}": [LocalPhase(f"I{i}", n, gmin, gmax, yellow, allred) for n in range(1, c + 1)]
        for i, c in enumerate(counts)
    }


def test_two_by_two_gives_four():
    assert len(generate_generalized_phases(locals_for([2, 2]))) == 4


def test_four_intersections_give_64():
    ps = generate_generalized_phases(locals_for([4, 2, 2, 4]))
    assert len(ps) == 64
    assert [p.index for p in ps] == sorted(p.index for p in ps)


def test_equal_locals_derive_same_attributes():
    ps = generate_generalized_phases(locals_for([2, 2]))
    p = ps.phases[0]
    assert (p.gmin, p.gmax, p.yellow, p.allred) == (5, 50, 4, 3)


def test_min_min_max_max_rule():
    ps = generate_generalized_phases({
        "A": [LocalPhase("A", 1, 3, 30, 2, 1)],
        "B": [LocalPhase("B", 1, 6, 20, 4, 0)],
    })
    p = ps.phases[0]
    assert (p.gmin, p.gmax, p.yellow, p.allred) == (3, 20, 4, 1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(1, 20), st.integers(0, 30)), min_size=1, max_size=3),
                min_size=1, max_size=3))
def test_min_rule_never_inverts_bounds(layout):
    # min over gmins is at most every gmin, hence at most every gmax
    locs = {
        f"I{i}": [LocalPhase(f"I{i}", n + 1, g, g + extra, 1, 1) for n, (g, extra) in enumerate(phases)]
        for i, phases in enumerate(layout)
    }
    ps = generate_generalized_phases(locs)
    assert ps.dropped == ()
    assert all(p.gmin <= p.gmax for p in ps)


def test_local_phase_rejects_bad_bounds():
    with pytest.raises(ValueError):
        LocalPhase("A", 1, 0, 10, 1, 1)
    with pytest.raises(ValueError):
        LocalPhase("A", 1, 8, 4, 1, 1)


def test_full_transition_count_64():
    ps = generate_generalized_phases(locals_for([4, 2, 2, 4]))
    pol = TransitionPolicy(FULL)
    assert all(len(successors(ps, p, pol)) == 63 for p in ps)
    assert transition_count(ps, pol) == 4032


def test_semi_adaptive_stay_or_advance_count():
    ps = generate_generalized_phases(locals_for([4, 2, 2, 4]))
    pol = parse_policy({"mode": SEMI}, ps)
    assert all(len(successors(ps, p, pol)) == 15 for p in ps)
    assert transition_count(ps, pol) == 960


def test_single_intersection_two_phases():
    ps = generate_generalized_phases(locals_for([2]))
    assert [len(successors(ps, p, TransitionPolicy(FULL))) for p in ps] == [1, 1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3))
def test_phase_set_properties(counts):
    ps = generate_generalized_phases(locals_for(counts))
    assert len(ps) == math.prod(counts)
    full = TransitionPolicy(FULL)
    semi = parse_policy({"mode": SEMI}, ps)
    for p in ps:
        assert len(p.index) == len(counts)
        f = {q.index for q in successors(ps, p, full)}
        s = {q.index for q in successors(ps, p, semi)}
        assert p.index not in f and p.index not in s
        assert s <= f


def test_semi_sequence_must_cover_each_local_once():
    ps = generate_generalized_phases(locals_for([3]))
    with pytest.raises(ValueError):
        parse_policy({"mode": SEMI, "sequences": {"I0": [1, 2, 2]}}, ps)


def test_mapping_values():
    sc = one_intersection([main_vehicle(1, 0)], permissive=True)
    mp = sc.mapping
    assert mp.m(("b", "c"), (1,)) == 1
    assert mp.m(("b", "c"), (2,)) == Fraction(1, 2)
    assert mp.m(("x", "y"), (1,)) == 0
    assert mp.m(("x", "y"), (2,)) == 1


def test_mapping_protected_only_gives_zero_elsewhere():
    sc = one_intersection([main_vehicle(1, 0)])
    assert sc.mapping.m(("b", "c"), (2,)) == 0


def test_delta_bounds():
    sc = one_intersection([main_vehicle(1, 0)])
    with pytest.raises(ValueError):
        build_mapping(sc.phases, sc.net, 1)


def test_group_successors_follow_script():
    sc = fixture("appendix-a")
    ps, pol = sc.phases, sc.policy
    assert pol.mode == GROUPS
    nxt = {p.index: [q.index for q in successors(ps, p, pol)] for p in ps}
    assert nxt[(1, 1)] == [(1, 2)]
    assert nxt[(1, 2)] == [(2, 2)]
    assert nxt[(2, 1)] == [(1, 1)]


def test_group_span_shorter_than_clearance_rejected():
    sc = fixture("exp1-s1")
    with pytest.raises(ValueError):
        parse_policy({"mode": GROUPS, "groups": [[{"phase": [1, 1], "duration": 2}]]}, sc.phases)


def test_one_local_active_per_intersection():
    ps = generate_generalized_phases(locals_for([3, 2]))
    for p, i in itertools.product(ps, range(2)):
        assert ps.local(p, i).local_id == p.index[i]
