import numpy as np
import pytest

from phasetime.exact import (FAMILIES, Limits, LimitsExceeded, brute_force_optimum, check_solution,
                             encode_assignment, enumerate_plans, export_milp)
from phasetime.loader import HorizonExceeded, customized_dnl, standard_dnl
from phasetime.ptgraph import PhaseTimeArc, PlanInfeasible, SignalPlan, shortest_plan
from phasetime.scenario import build_scenario

from conftest import main_vehicle, one_intersection, side_vehicle, tiny


def detached_signal(vehicles, horizon=10):
    """Vehicle path a->b->c never meets the only signal, which sits on x->y."""
    net = {
        "nodes": ["a", "b", "c", "x", "y", "z"],
        "horizon": horizon,
        "links": [
            {"from": "a", "to": "b", "fftt": 2, "sat_rate_vph": 3600},
            {"from": "b", "to": "c", "fftt": 3, "sat_rate_vph": 3600},
            {"from": "x", "to": "y", "fftt": 2, "sat_rate_vph": 3600, "control": {"intersection": "A"}},
            {"from": "y", "to": "z", "fftt": 2, "sat_rate_vph": 3600},
        ],
    }
    phases = {"intersections": [{"id": "A", "phases": [
        {"id": 1, "gmin": 2, "gmax": 20, "yellow": 1, "allred": 0, "links": [{"from": "x", "to": "y"}]},
        {"id": 2, "gmin": 2, "gmax": 20, "yellow": 1, "allred": 0, "links": []},
    ]}]}
    return build_scenario(net, vehicles, phases)


def test_hand_counted_vehicle_rows():
    inst = export_milp(detached_signal([{"vid": 1, "t0": 0, "nodes": ["a", "b", "c"]}]))
    c = inst.counts()
    # leg a->b may start at 0..5 and b->c at 2..7 (6 moves each); waits fill 0..4 and 2..6 (5 each)
    assert c["x_columns"] == 22
    # nodes (a, 0..5) and (b, 2..7), plus the arrival row
    assert c["rows_by_family"]["vconserve7"] == 13
    assert c["nonzeros_by_family"]["vconserve7"] == 44
    assert c["rows_by_family"]["cap4"] == 0


def test_no_vehicles_leaves_only_signal_side():
    c = export_milp(detached_signal([])).counts()
    assert c["x_columns"] == 0
    assert c["rows"] == c["rows_by_family"]["pconserve8"] > 0
    assert set(k for k, v in c["rows_by_family"].items() if v) == {"pconserve8"}


def test_export_is_deterministic():
    a = export_milp(tiny(5)).to_lp()
    b = export_milp(tiny(5)).to_lp()
    assert a == b
    assert a.startswith("\\") and "Subject To" in a and a.rstrip().endswith("End")


def test_export_refuses_large_instances():
    with pytest.raises(LimitsExceeded) as err:
        export_milp(tiny(1), max_columns=10)
    assert "columns" in err.value.report


def test_round_trip_objective():
    checked = 0
    for seed in range(40):
        sc = tiny(seed)
        rng = np.random.default_rng(seed)
        lam = rng.integers(0, 4, size=sc.zero_lambda().shape).astype(float)
        try:
            plan = shortest_plan(sc.graph(), sc.costs(lam), "enforce")
            traj, moe = standard_dnl(sc, plan)
        except (PlanInfeasible, HorizonExceeded):
            continue
        inst = export_milp(sc)
        bad, obj = check_solution(inst, encode_assignment(inst, sc, traj, plan))
        assert bad == [], seed
        assert obj == moe.objective, seed
        checked += 1
    assert checked >= 15


def test_red_running_breaks_only_signal_capacity():
    sc = one_intersection([main_vehicle(1, 0), side_vehicle(2, 0)], sat_vph=3600, horizon=30, gmax=20)
    # main vehicle reaches the stop line at 3, during the all-red of the first switch
    plan = SignalPlan([PhaseTimeArc((1,), 0, (2,), 4, 1, 1), PhaseTimeArc((2,), 4, (1,), 14, 1, 1),
                       PhaseTimeArc((1,), 14, None, 30)], 30)
    cus = customized_dnl(sc, sc.zero_lambda())
    inst = export_milp(sc)
    with pytest.raises(ValueError):
        encode_assignment(inst, sc, cus.trajectories,
                          SignalPlan([PhaseTimeArc((2,), 0, (1,), 10, 1, 1), PhaseTimeArc((1,), 10, None, 30)], 30))
    bad, _ = check_solution(inst, encode_assignment(inst, sc, cus.trajectories, plan))
    assert bad and {b.family for b in bad} == {"cap3p"}


def test_all_zero_breaks_conservation():
    sc = one_intersection([main_vehicle(1, 0), side_vehicle(2, 3)], horizon=30)
    inst = export_milp(sc)
    bad, obj = check_solution(inst, {n: 0 for n in inst.names})
    fams = {b.family for b in bad}
    assert fams == {"vconserve7", "pconserve8"}
    origins = {b.row for b in bad if b.family == "vconserve7"}
    assert "vconserve7_v1_a_0" in origins and "vconserve7_v2_x_3" in origins
    assert obj == 0


def test_missing_variable_reported():
    sc = detached_signal([{"vid": 1, "t0": 0, "nodes": ["a", "b", "c"]}])
    inst = export_milp(sc)
    values = {n: 0 for n in inst.names[1:]}
    bad, _ = check_solution(inst, values)
    assert bad[0].family == "binary"


def test_families_partition_rows():
    inst = export_milp(tiny(2))
    assert all(r.family in FAMILIES for r in inst.rows)
    assert sum(inst.counts()["rows_by_family"].values()) == len(inst.rows)
    assert all(0 <= k < len(inst.names) for r in inst.rows for k in r.coeffs)


def test_oracle_trivial_green():
    sc = one_intersection([main_vehicle(1, 0)], sat_vph=3600, horizon=20, gmax=100)
    res = brute_force_optimum(sc)
    assert res.total_delay == 0 and res.transitions == 0 and res.objective == 0


def test_oracle_limits():
    with pytest.raises(LimitsExceeded):
        brute_force_optimum(one_intersection([main_vehicle(1, 0)], horizon=61), limits=Limits())
    vehicles = [main_vehicle(i, 0) for i in range(1, 10)]
    with pytest.raises(LimitsExceeded):
        brute_force_optimum(one_intersection(vehicles, horizon=50))


def test_oracle_beats_every_enumerated_plan():
    vehicles = [main_vehicle(1, 0), side_vehicle(2, 1), main_vehicle(3, 4)]
    sc = one_intersection(vehicles, sat_vph=3600, horizon=24, gmin=3, gmax=8, yellow=1, allred=1)
    res = brute_force_optimum(sc)
    seen = []
    for plan in enumerate_plans(sc.graph(), "enforce"):
        try:
            _, moe = standard_dnl(sc, plan)
        except HorizonExceeded:
            continue
        seen.append(moe.objective)
    assert seen and res.objective == min(seen)
    _, moe = standard_dnl(sc, res.plan)
    assert moe.objective == res.objective
