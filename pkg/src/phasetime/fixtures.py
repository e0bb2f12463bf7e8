"""Bundled scenarios: the two-intersection arterial and random tiny instances.

Arterial layout (node ids)::

        17        13                 25        21
        |18       |14                |26       |22
    1 - 2 - [I1] - 3 ---- 4 - [I2] - 5 - 6          eastbound
   12 - 11 - [I1] - 10 ---- 9 - [I2] - 8 - 7        westbound
        |19       |15                |27       |23
        20        16                 28        24

Controlled links: 2->3, 10->11, 14->15, 18->19 at I1; 4->5, 8->9,
22->23, 26->27 at I2. Mainline local phase 1 serves both directions,
side local phase 2 serves both cross streets.
"""
from __future__ import annotations

import json
import random
from pathlib import Path

FIXTURES = ("exp1-s1", "exp1-s2", "exp1-s3", "exp1-s4", "appendix-a")

SAT_VPH = 1800
LANES = 2

ASSUMPTIONS = [
    "node numbering rebuilt from the OD listing: 1->6 and 7->12 mainline, 17->20, 13->16, 25->28, 21->24 side",
    "12 s between intersections (3->4, 9->10); 2 s controlled crossing links; 10 s approach and exit links",
    "storage 10 on long links, 2 on controlled links; s3/s4 cut 3->4 and 9->10 to 5",
    "1800 veh/h/lane x 2 lanes on every link (1 veh/s)",
    "local phases: gmin 4, gmax 40, yellow 2, all-red 1",
    "departure seconds chosen to give each scenario its stated qualitative property",
]


def _link(a, b, fftt, storage, inter=None):
    doc = {"from": a, "to": b, "fftt": fftt, "sat_rate_vph": SAT_VPH, "lanes": LANES, "storage": storage}
    if inter:
        doc["control"] = {"intersection": inter}
    return doc


def arterial_network(horizon: int, mid_storage: int = 10) -> dict:
    links = [
        _link(1, 2, 10, 10), _link(2, 3, 2, 2, "I1"), _link(3, 4, 12, mid_storage),
        _link(4, 5, 2, 2, "I2"), _link(5, 6, 10, 10),
        _link(7, 8, 10, 10), _link(8, 9, 2, 2, "I2"), _link(9, 10, 12, mid_storage),
        _link(10, 11, 2, 2, "I1"), _link(11, 12, 10, 10),
    ]
    for a, inter in ((13, "I1"), (17, "I1"), (21, "I2"), (25, "I2")):
        links += [_link(a, a + 1, 10, 10), _link(a + 1, a + 2, 2, 2, inter), _link(a + 2, a + 3, 10, 10)]
    return {"nodes": list(range(1, 29)), "horizon": horizon, "links": links, "notes": ASSUMPTIONS}


def arterial_phases(policy: dict | None = None) -> dict:
    def local(lid, links):
        return {"id": lid, "gmin": 4, "gmax": 40, "yellow": 2, "allred": 1,
                "links": [{"from": a, "to": b, "protection": "protected"} for a, b in links]}

    doc = {
        "intersections": [
            {"id": "I1", "phases": [local(1, [(2, 3), (10, 11)]), local(2, [(14, 15), (18, 19)])]},
            {"id": "I2", "phases": [local(1, [(4, 5), (8, 9)]), local(2, [(22, 23), (26, 27)])]},
        ],
        "initial_phase": [1, 1],
        "delta": 0.5,
        "rho_y": 0.5,
    }
    if policy:
        doc["policy"] = policy
    return doc


ROUTES = {
    "eb": [1, 2, 3, 4, 5, 6],
    "wb": [7, 8, 9, 10, 11, 12],
    "i1a": [17, 18, 19, 20],
    "i1b": [13, 14, 15, 16],
    "i2a": [25, 26, 27, 28],
    "i2b": [21, 22, 23, 24],
}


def _vehicles(eb, wb, side) -> list:
    out = []
    vid = 1
    for t in eb:
        out.append({"vid": vid, "t0": t, "nodes": ROUTES["eb"], "group": "mainline"})
        vid += 1
    for name in ("i1a", "i1b", "i2a", "i2b"):
        for t in side[name]:
            out.append({"vid": vid, "t0": t, "nodes": ROUTES[name], "group": "side"})
            vid += 1
    for t in wb:
        out.append({"vid": vid, "t0": t, "nodes": ROUTES["wb"], "group": "mainline"})
        vid += 1
    return out


# non-competing: side streets arrive after the mainline has cleared both intersections
S1 = dict(eb=list(range(10)), wb=[0, 1],
          side={"i1a": [27, 28], "i1b": [27, 28], "i2a": [27, 28], "i2b": [27, 28]})
# competing: side vehicles show up while the second eastbound group is crossing
S2 = dict(eb=[0, 1, 2, 3, 4, 12, 13, 14, 15, 16], wb=[0, 1],
          side={"i1a": [12, 13], "i1b": [12, 13], "i2a": [26, 27], "i2b": [26, 27]})

APPENDIX_A_GROUPS = {
    "mode": "groups",
    "groups": [
        [{"phase": [1, 1], "duration": 30}, {"phase": [1, 2], "duration": 6},
         {"phase": [2, 2], "duration": 6}, {"phase": [2, 1], "duration": 6}],
        [{"phase": [1, 1], "duration": 6}, {"phase": [1, 2], "duration": 6},
         {"phase": [2, 2], "duration": 6}, {"phase": [2, 1], "duration": 6}],
    ],
    "free": [],
}


def fixture_docs(name: str) -> tuple[dict, list, dict]:
    if name == "exp1-s1":
        return arterial_network(60), _vehicles(**S1), arterial_phases()
    if name == "exp1-s2":
        return arterial_network(72), _vehicles(**S2), arterial_phases()
    if name == "exp1-s3":
        return arterial_network(72, mid_storage=5), _vehicles(**S1), arterial_phases()
    if name == "exp1-s4":
        return arterial_network(72, mid_storage=5), _vehicles(**S2), arterial_phases()
    if name == "appendix-a":
        return arterial_network(72), _vehicles(**S2), arterial_phases(APPENDIX_A_GROUPS)
    raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")


def write_docs(out_dir, network: dict, vehicles: list, phases: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "network.json").write_text(json.dumps(network, indent=2) + "\n")
    (out / "vehicles.json").write_text(json.dumps({"vehicles": vehicles}, indent=2) + "\n")
    (out / "phases.json").write_text(json.dumps(phases, indent=2) + "\n")
    return out


def scaffold_fixture(name: str, out_dir) -> Path:
    return write_docs(out_dir, *fixture_docs(name))


def random_tiny(seed: int, max_vehicles: int = 6, max_horizon: int = 60) -> tuple[dict, list, dict]:
    """A one- or two-intersection corridor with cross streets and a few vehicles."""
    rng = random.Random(seed)
    n_int = rng.choice((1, 2))
    nodes = []
    links = []
    routes = []

    def node(tag):
        nodes.append(tag)
        return tag

    def rate():
        return rng.choice((1800, 3600))

    main = [node("m0"), node("m1")]
    links.append({"from": "m0", "to": "m1", "fftt": rng.randint(1, 4), "sat_rate_vph": rate()})
    inters = []
    for i in range(n_int):
        a, b = main[-1], node(f"m{len(main)}")
        main.append(b)
        links.append({"from": a, "to": b, "fftt": rng.randint(1, 2), "sat_rate_vph": rate(),
                      "storage": rng.choice((None, 2, 3)), "control": {"intersection": f"I{i}"}})
        c = node(f"m{len(main)}")
        main.append(c)
        links.append({"from": b, "to": c, "fftt": rng.randint(2, 5), "sat_rate_vph": rate(),
                      "storage": rng.choice((None, 2, 4))})
        s0, s1, s2, s3 = (node(f"s{i}{k}") for k in range(4))
        links += [
            {"from": s0, "to": s1, "fftt": rng.randint(1, 4), "sat_rate_vph": rate()},
            {"from": s1, "to": s2, "fftt": rng.randint(1, 2), "sat_rate_vph": rate(),
             "control": {"intersection": f"I{i}"}},
            {"from": s2, "to": s3, "fftt": rng.randint(1, 3), "sat_rate_vph": rate()},
        ]
        routes.append([s0, s1, s2, s3])
        inters.append((f"I{i}", (a, b), (s1, s2)))
    routes.insert(0, main)

    vehicles = []
    for vid in range(1, rng.randint(1, max_vehicles) + 1):
        vehicles.append({"vid": vid, "t0": rng.randint(0, 10), "nodes": rng.choice(routes)})

    ff = {(l["from"], l["to"]): l["fftt"] for l in links}
    need = max((v["t0"] + sum(ff[(a, b)] for a, b in zip(v["nodes"][:-1], v["nodes"][1:])) for v in vehicles), default=1)
    horizon = min(max_horizon, need + rng.randint(8, 20))

    intersections = []
    for iid, mlink, slink in inters:
        phases = []
        for lid, served in ((1, [mlink]), (2, [slink])):
            gmin = rng.randint(2, 4)
            gmax = rng.choice((gmin + rng.randint(2, 8), None))
            refs = [{"from": x, "to": y, "protection": "protected"} for x, y in served]
            if lid == 2 and rng.random() < 0.3:
                refs.append({"from": mlink[0], "to": mlink[1], "protection": "permissive"})
            phases.append({"id": lid, "gmin": gmin, "gmax": gmax,
                           "yellow": rng.randint(0, 2), "allred": rng.randint(0, 1), "links": refs})
        intersections.append({"id": iid, "phases": phases})
    network = {"nodes": nodes, "horizon": horizon, "links": links}
    return network, vehicles, {"intersections": intersections}
