"""Road network, vehicle path flows and the per-vehicle auxiliary data.

Time is integer seconds. Saturation rates are kept as exact fractions of
vehicles per second so the loaders can count capacity without rounding
drift.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Hashable, Iterable

if TYPE_CHECKING:
    from .loader import TrajectorySet

Node = Hashable
LinkKey = tuple  # (from, to)


class ScenarioError(ValueError):
    """Raised when scenario documents fail validation.

    ``problems`` holds every issue found, each prefixed with the document
    location it came from (``links[3].fftt`` and so on).
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Link:
    source: Node
    target: Node
    fftt: int
    sat_rate: Fraction  # vehicles / second
    storage: int | None = None  # None = no limit
    intersection: str | None = None

    @property
    def key(self) -> LinkKey:
        return (self.source, self.target)

    @property
    def controlled(self) -> bool:
        return self.intersection is not None


@dataclass(frozen=True)
class VehiclePath:
    vid: int
    t0: int
    nodes: tuple
    group: str | None = None

    @property
    def links(self) -> tuple[LinkKey, ...]:
        return tuple(zip(self.nodes[:-1], self.nodes[1:]))

    @property
    def origin(self) -> Node:
        return self.nodes[0]

    @property
    def destination(self) -> Node:
        return self.nodes[-1]


@dataclass
class RoadNetwork:
    nodes: frozenset
    links: tuple[Link, ...]
    horizon: int
    time_step: int = 1
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {link.key: k for k, link in enumerate(self.links)}

    def link(self, key: LinkKey) -> Link:
        return self.links[self.index[key]]

    @property
    def controlled(self) -> list[Link]:
        return [link for link in self.links if link.controlled]

    @property
    def controlled_keys(self) -> list[LinkKey]:
        return [link.key for link in self.links if link.controlled]

    def downstream_first(self) -> list[int]:
        """Link indices ordered so a link comes before any link feeding it.

        Used for the within-second processing order: vehicles leave a link
        before new ones are admitted to it. Falls back to index order when
        the link graph has a cycle.
        """
        n = len(self.links)
        feeds: dict[int, list[int]] = {k: [] for k in range(n)}
        by_source: dict[Node, list[int]] = {}
        for k, link in enumerate(self.links):
            by_source.setdefault(link.source, []).append(k)
        indeg = [0] * n
        for k, link in enumerate(self.links):
            for nxt in by_source.get(link.target, []):
                if nxt == k:
                    continue
                feeds[k].append(nxt)
                indeg[nxt] += 1
        ready = sorted(k for k in range(n) if indeg[k] == 0)
        topo: list[int] = []
        while ready:
            k = ready.pop(0)
            topo.append(k)
            for nxt in feeds[k]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    ready.append(nxt)
            ready.sort()
        if len(topo) != n:
            return list(range(n))
        return topo[::-1]


@dataclass
class PathAux:
    """Per-vehicle quantities derived from fixed paths.

    ``route[vid]`` is the list of link indices traversed, ``earliest[vid]``
    the non-delay entry second of each of those links and ``freeflow[vid]``
    the free-flow path time (attached to the last link). ``fifo_order`` maps
    a link index to the vehicles that traverse it, in required entry order.
    """

    route: dict[int, list[int]]
    earliest: dict[int, list[int]]
    freeflow: dict[int, int]
    fifo_order: dict[int, list[int]]
    _rank: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._rank = {
            (vid, link): r
            for link, vids in self.fifo_order.items()
            for r, vid in enumerate(vids)
        }

    def omega(self, vid: int, link: int) -> int:
        return int(link in self.route[vid])

    def phi(self, vid: int, link: int) -> int:
        return int(self.route[vid][-1] == link)

    def c(self, vid: int, link: int) -> int:
        return self.freeflow[vid] if self.phi(vid, link) else 0

    def e(self, vid: int, link: int) -> int:
        r = self.route[vid]
        return self.earliest[vid][r.index(link)] if link in r else 0

    def fifo(self, v: int, w: int, link: int) -> int:
        rv = self._rank.get((v, link))
        rw = self._rank.get((w, link))
        if rv is None or rw is None:
            return 0
        return int(rv < rw)


def _parse(doc: Any) -> Any:
    if isinstance(doc, (str, bytes)):
        return json.loads(doc)
    return doc


def _as_rate(value: Any) -> Fraction:
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def _node(value: Any) -> Node:
    return tuple(value) if isinstance(value, list) else value


def load_scenario(network_doc: Any, vehicles_doc: Any) -> tuple[RoadNetwork, list[VehiclePath]]:
    """Parse and validate ``network.json`` / ``vehicles.json`` content.

    Accepts either JSON text or already-decoded objects. All problems are
    collected before raising :class:`ScenarioError`.
    """
    ndoc = _parse(network_doc)
    vdoc = _parse(vehicles_doc)
    problems: list[str] = []

    nodes = [_node(n) for n in ndoc.get("nodes", [])]
    node_set = frozenset(nodes)
    if len(node_set) != len(nodes):
        problems.append("nodes: duplicate node id")
    horizon = ndoc.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        problems.append("horizon: must be a positive integer")
        horizon = 0

    links: list[Link] = []
    seen: set = set()
    for k, raw in enumerate(ndoc.get("links", [])):
        where = f"links[{k}]"
        src, dst = _node(raw.get("from")), _node(raw.get("to"))
        for name, value in (("from", src), ("to", dst)):
            if value not in node_set:
                problems.append(f"{where}.{name}: unknown node {value!r}")
        if (src, dst) in seen:
            problems.append(f"{where}: duplicate link {src!r}->{dst!r}")
        seen.add((src, dst))
        fftt = raw.get("fftt")
        if not isinstance(fftt, int) or fftt < 1:
            problems.append(f"{where}.fftt: must be an integer >= 1")
            fftt = 1
        lanes = raw.get("lanes", 1)
        vph = raw.get("sat_rate_vph")
        try:
            rate = _as_rate(vph) * lanes / 3600
        except (TypeError, ValueError):
            rate = Fraction(0)
        if rate <= 0:
            problems.append(f"{where}.sat_rate_vph: must be positive (lanes > 0)")
            rate = Fraction(1)
        storage = raw.get("storage")
        if storage in ("inf", "unbounded"):
            storage = None
        if storage is not None and (not isinstance(storage, int) or storage < 1):
            problems.append(f"{where}.storage: must be an integer >= 1 or null")
            storage = None
        control = raw.get("control")
        inter = None
        if control:
            inter = control.get("intersection")
            if inter is None:
                problems.append(f"{where}.control.intersection: missing")
        links.append(Link(src, dst, fftt, rate, storage, inter))

    net = RoadNetwork(node_set, tuple(links), horizon)

    vehicles: list[VehiclePath] = []
    vids: set = set()
    raw_list = vdoc["vehicles"] if isinstance(vdoc, dict) else vdoc
    for k, raw in enumerate(raw_list):
        where = f"vehicles[{k}]"
        vid = raw.get("vid")
        if not isinstance(vid, int):
            problems.append(f"{where}.vid: must be an integer")
            continue
        if vid in vids:
            problems.append(f"{where}.vid: duplicate vehicle id {vid}")
        vids.add(vid)
        t0 = raw.get("t0")
        if not isinstance(t0, int) or t0 < 0:
            problems.append(f"{where}.t0: must be a nonnegative integer")
            continue
        path = tuple(_node(n) for n in raw.get("nodes", []))
        if len(path) < 2:
            problems.append(f"{where}.nodes: a path needs at least two nodes")
            continue
        ok = True
        for a, b in zip(path[:-1], path[1:]):
            if (a, b) not in net.index:
                problems.append(f"{where}.nodes: no link {a!r}->{b!r}")
                ok = False
        if not ok:
            continue
        v = VehiclePath(vid, t0, path, raw.get("group"))
        if net.link(v.links[-1]).controlled:
            problems.append(f"{where}.nodes: last link {v.links[-1]!r} is a controlled link")
        ff = sum(net.link(key).fftt for key in v.links)
        if horizon and t0 + ff > horizon:
            problems.append(
                f"{where}: horizon {horizon} shorter than free-flow arrival {t0 + ff}"
            )
        vehicles.append(v)

    if problems:
        raise ScenarioError(problems)
    vehicles.sort(key=lambda v: v.vid)
    return net, vehicles


def derive_path_aux(net: RoadNetwork, vehicles: Iterable[VehiclePath]) -> PathAux:
    route: dict[int, list[int]] = {}
    earliest: dict[int, list[int]] = {}
    freeflow: dict[int, int] = {}
    users: dict[int, list[tuple[int, int]]] = {}
    for v in vehicles:
        idx = [net.index[key] for key in v.links]
        t = v.t0
        es = []
        for k in idx:
            es.append(t)
            users.setdefault(k, []).append((t, v.vid))
            t += net.links[k].fftt
        route[v.vid] = idx
        earliest[v.vid] = es
        freeflow[v.vid] = t - v.t0
    fifo_order = {k: [vid for _, vid in sorted(pairs)] for k, pairs in users.items()}
    return PathAux(route, earliest, freeflow, fifo_order)


def occupancy(trajectories: "TrajectorySet", link: int, t: int) -> int:
    """Vehicles physically on ``link`` at second ``t`` (queued ones included)."""
    count = 0
    for tr in trajectories.vehicles.values():
        for k, entry, exit_ in tr.legs:
            if k == link and entry <= t and (exit_ is None or t < exit_):
                count += 1
    return count
