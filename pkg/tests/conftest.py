import functools

import pytest

from phasetime.fixtures import fixture_docs, random_tiny
from phasetime.scenario import build_scenario


def one_intersection(vehicles, horizon=30, sat_vph=1800, storage=None, gmin=2, gmax=10, yellow=1, allred=1,
                     permissive=False, policy=None):
    """Approach a->b, controlled b->c, exit c->d, plus a cross street x->y (controlled)."""
    net = {
        "nodes": ["a", "b", "c", "d", "x", "y", "z"],
        "horizon": horizon,
        "links": [
            {"from": "a", "to": "b", "fftt": 3, "sat_rate_vph": sat_vph},
            {"from": "b", "to": "c", "fftt": 2, "sat_rate_vph": sat_vph, "storage": storage,
             "control": {"intersection": "A"}},
            {"from": "c", "to": "d", "fftt": 3, "sat_rate_vph": sat_vph},
            {"from": "x", "to": "y", "fftt": 2, "sat_rate_vph": sat_vph, "control": {"intersection": "A"}},
            {"from": "y", "to": "z", "fftt": 2, "sat_rate_vph": sat_vph},
        ],
    }
    side_links = [{"from": "x", "to": "y"}]
    if permissive:
        side_links.append({"from": "b", "to": "c", "protection": "permissive"})
    phases = {"intersections": [{"id": "A", "phases": [
        {"id": 1, "gmin": gmin, "gmax": gmax, "yellow": yellow, "allred": allred, "links": [{"from": "b", "to": "c"}]},
        {"id": 2, "gmin": gmin, "gmax": gmax, "yellow": yellow, "allred": allred, "links": side_links},
    ]}]}
    if policy:
        phases["policy"] = policy
    return build_scenario(net, vehicles, phases)


def main_vehicle(vid, t0):
    return {"vid": vid, "t0": t0, "nodes": ["a", "b", "c", "d"]}


def side_vehicle(vid, t0):
    return {"vid": vid, "t0": t0, "nodes": ["x", "y", "z"]}


@functools.lru_cache(maxsize=None)
def fixture(name):
    return build_scenario(*fixture_docs(name))


@functools.lru_cache(maxsize=None)
def tiny(seed):
    return build_scenario(*random_tiny(seed))


@pytest.fixture
def s1():
    return fixture("exp1-s1")


ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)
