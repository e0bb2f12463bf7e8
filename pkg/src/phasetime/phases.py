"""Local phases, generalized phases and the transition policies between them."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from .network import RoadNetwork, ScenarioError

log = logging.getLogger(__name__)

PROTECTED = "protected"
PERMISSIVE = "permissive"

PhaseIndex = tuple  # one local phase id per intersection


@dataclass(frozen=True)
class LocalPhase:
    intersection: str
    local_id: int
    gmin: int
    gmax: float  # int, or math.inf when unrestricted
    yellow: int
    allred: int
    served: tuple = ()  # ((from, to), PROTECTED | PERMISSIVE)

    def __post_init__(self):
        if not (1 <= self.gmin <= self.gmax):
            raise ValueError(f"local phase {self.intersection}/{self.local_id}: need 1 <= gmin <= gmax")
        if self.yellow < 0 or self.allred < 0:
            raise ValueError(f"local phase {self.intersection}/{self.local_id}: negative clearance")


@dataclass(frozen=True)
class GeneralizedPhase:
    index: PhaseIndex
    gmin: int
    gmax: float
    yellow: int
    allred: int

    @property
    def clearance(self) -> int:
        return self.yellow + self.allred

    def label(self) -> str:
        return ".".join(str(n) for n in self.index)


@dataclass
class PhaseSet:
    intersections: tuple[str, ...]
    locals: dict  # (intersection, local_id) -> LocalPhase
    phases: tuple[GeneralizedPhase, ...]
    dropped: tuple[PhaseIndex, ...] = ()
    position: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.position = {p.index: k for k, p in enumerate(self.phases)}

    def __len__(self):
        return len(self.phases)

    def __iter__(self):
        return iter(self.phases)

    def get(self, index: PhaseIndex) -> GeneralizedPhase:
        return self.phases[self.position[tuple(index)]]

    def local(self, p: GeneralizedPhase, i: int) -> LocalPhase:
        return self.locals[(self.intersections[i], p.index[i])]

    def local_ids(self, intersection: str) -> list[int]:
        return sorted(n for (inter, n) in self.locals if inter == intersection)


def generate_generalized_phases(locals_by_intersection: dict[str, list[LocalPhase]]) -> PhaseSet:
    """Cartesian product of local phases, one per intersection.

    Attributes follow the min/min/max/max rule: the shortest local minimum
    green, the shortest local maximum green, the longest yellow and the
    longest all-red. Products whose derived gmin exceeds gmax are dropped
    with a warning.
    """
    inters = tuple(locals_by_intersection)
    if not inters:
        raise ValueError("at least one intersection is required")
    table = {}
    ordered = []
    for inter in inters:
        lps = sorted(locals_by_intersection[inter], key=lambda lp: lp.local_id)
        if not lps:
            raise ValueError(f"intersection {inter} has no local phases")
        for lp in lps:
            table[(inter, lp.local_id)] = lp
        ordered.append(lps)
    phases = []
    dropped = []
    for combo in itertools.product(*ordered):
        index = tuple(lp.local_id for lp in combo)
        gmin = min(lp.gmin for lp in combo)
        gmax = min(lp.gmax for lp in combo)
        if gmin > gmax:
            log.warning("dropping generalized phase %s: derived gmin %s > gmax %s", index, gmin, gmax)
            dropped.append(index)
            continue
        phases.append(
            GeneralizedPhase(
                index,
                gmin,
                gmax,
                max(lp.yellow for lp in combo),
                max(lp.allred for lp in combo),
            )
        )
    return PhaseSet(inters, table, tuple(phases), tuple(dropped))


@dataclass
class MappingMatrix:
    """Capacity share m(link, phase) in {0, delta, 1} for each controlled link."""

    links: list  # controlled link keys, column order
    phases: list  # phase indices, row order
    values: list  # values[row][col] as Fraction
    delta: Fraction

    def __post_init__(self):
        self._row = {p: r for r, p in enumerate(self.phases)}
        self._col = {k: c for c, k in enumerate(self.links)}
        self.array = np.array([[float(x) for x in row] for row in self.values], dtype=float).reshape(
            len(self.phases), len(self.links)
        )

    def m(self, link, phase) -> Fraction:
        return self.values[self._row[tuple(phase)]][self._col[link]]

    def row(self, phase) -> int:
        return self._row[tuple(phase)]

    def col(self, link) -> int:
        return self._col[link]


def build_mapping(phases: PhaseSet, net: RoadNetwork, delta: Fraction | float = Fraction(1, 2)) -> MappingMatrix:
    delta = Fraction(str(delta)) if isinstance(delta, float) else Fraction(delta)
    if not (0 < delta < 1):
        raise ValueError("delta must lie strictly between 0 and 1")
    keys = net.controlled_keys
    served: dict = {}
    for (inter, n), lp in phases.locals.items():
        for key, prot in lp.served:
            served.setdefault((inter, n), {})[tuple(key)] = prot
    values = []
    for p in phases:
        row = []
        for key in keys:
            best = Fraction(0)
            for i, inter in enumerate(phases.intersections):
                prot = served.get((inter, p.index[i]), {}).get(key)
                if prot == PROTECTED:
                    best = Fraction(1)
                elif prot == PERMISSIVE and best < 1:
                    best = delta
            row.append(best)
        values.append(row)
    return MappingMatrix(keys, [p.index for p in phases], values, delta)


FULL = "full"
SEMI = "semi"
GROUPS = "groups"


@dataclass(frozen=True)
class TransitionPolicy:
    """How one generalized phase may hand over to the next.

    ``full``: any other phase. ``semi``: each intersection keeps its local
    phase or advances to the next one in its fixed cyclic ``sequences``.
    ``groups``: ordered blocks of (phase, span seconds) run atomically,
    chained freely with each other and with the ``free`` phases.
    """

    mode: str = FULL
    sequences: tuple = ()  # ((intersection, (local ids...)), ...)
    groups: tuple = ()  # (((phase index), span), ...) per group
    free: tuple = ()  # phase indices usable outside groups

    def sequence(self, intersection: str) -> tuple:
        return dict(self.sequences)[intersection]


def _validate_policy(phases: PhaseSet, policy: TransitionPolicy) -> None:
    if policy.mode == SEMI:
        seqs = dict(policy.sequences)
        for inter in phases.intersections:
            seq = seqs.get(inter)
            if seq is None:
                raise ValueError(f"semi-adaptive policy lacks a sequence for {inter}")
            if sorted(seq) != phases.local_ids(inter):
                raise ValueError(f"sequence for {inter} must cover each local phase exactly once")
    elif policy.mode == GROUPS:
        for g, group in enumerate(policy.groups):
            if not group:
                raise ValueError(f"group {g} is empty")
            for k, (idx, span) in enumerate(group):
                p = phases.get(idx)
                if span < p.clearance:
                    raise ValueError(f"group {g} block {k}: span {span} shorter than clearance")
                if k and tuple(group[k - 1][0]) == tuple(idx):
                    raise ValueError(f"group {g}: consecutive blocks repeat phase {idx}")
        for idx in policy.free:
            phases.get(idx)
        if not policy.groups and not policy.free:
            raise ValueError("phase-group policy needs at least one group or free phase")
    elif policy.mode != FULL:
        raise ValueError(f"unknown policy mode {policy.mode!r}")


def successors(phases: PhaseSet, p: GeneralizedPhase, policy: TransitionPolicy) -> list[GeneralizedPhase]:
    if policy.mode == FULL:
        return [q for q in phases if q.index != p.index]
    if policy.mode == SEMI:
        options = []
        for i, inter in enumerate(phases.intersections):
            seq = policy.sequence(inter)
            cur = p.index[i]
            nxt = seq[(seq.index(cur) + 1) % len(seq)]
            options.append(sorted({cur, nxt}))
        out = []
        for combo in itertools.product(*options):
            if combo != p.index and combo in phases.position:
                out.append(phases.get(combo))
        return out
    # phase groups: scripted inside a block, free choice among entry points otherwise
    nxt: list = []
    exits = False
    for group in policy.groups:
        idxs = [tuple(b[0]) for b in group]
        for k, idx in enumerate(idxs):
            if idx != p.index:
                continue
            if k + 1 < len(idxs):
                nxt.append(idxs[k + 1])
            else:
                exits = True
    if p.index in {tuple(f) for f in policy.free}:
        exits = True
    if exits:
        nxt.extend(entry_points(policy))
    seen = []
    for idx in nxt:
        if idx != p.index and idx not in seen:
            seen.append(idx)
    return [phases.get(idx) for idx in sorted(seen)]


def entry_points(policy: TransitionPolicy) -> list:
    pts = [tuple(group[0][0]) for group in policy.groups] + [tuple(f) for f in policy.free]
    out = []
    for idx in pts:
        if idx not in out:
            out.append(idx)
    return out


def transition_count(phases: PhaseSet, policy: TransitionPolicy) -> int:
    return sum(len(successors(phases, p, policy)) for p in phases)


def _gmax(value: Any) -> float:
    if value is None or value == "inf":
        return math.inf
    return int(value)


def load_phases(doc: Any, net: RoadNetwork) -> tuple[PhaseSet, TransitionPolicy, dict]:
    """Build the phase set and policy from a ``phases.json`` document.

    Returns ``(phase_set, policy, settings)`` where settings carries
    ``delta``, ``rho_y`` and ``initial_phase`` when present.
    """
    import json

    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    problems: list[str] = []
    by_inter: dict[str, list[LocalPhase]] = {}
    served_by: dict = {}
    for a, inter in enumerate(doc.get("intersections", [])):
        iid = inter.get("id")
        lps = []
        for b, raw in enumerate(inter.get("phases", [])):
            where = f"intersections[{a}].phases[{b}]"
            served = []
            for c, ref in enumerate(raw.get("links", [])):
                key = (ref.get("from"), ref.get("to"))
                prot = ref.get("protection", PROTECTED)
                if prot not in (PROTECTED, PERMISSIVE):
                    problems.append(f"{where}.links[{c}].protection: {prot!r}")
                if key not in net.index:
                    problems.append(f"{where}.links[{c}]: unknown link {key!r}")
                    continue
                link = net.link(key)
                if link.intersection != iid:
                    problems.append(f"{where}.links[{c}]: link {key!r} is not controlled by {iid}")
                    continue
                served.append((key, prot))
                served_by.setdefault(key, []).append(raw.get("id"))
            try:
                lps.append(
                    LocalPhase(
                        iid,
                        int(raw["id"]),
                        int(raw["gmin"]),
                        _gmax(raw.get("gmax")),
                        int(raw.get("yellow", 0)),
                        int(raw.get("allred", 0)),
                        tuple(served),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                problems.append(f"{where}: {exc}")
        by_inter[iid] = lps
    for link in net.controlled:
        if link.intersection not in by_inter:
            problems.append(f"link {link.key!r}: intersection {link.intersection} has no phases")
        elif link.key not in served_by:
            problems.append(f"link {link.key!r}: not served by any local phase")
    if problems:
        raise ScenarioError(problems)

    phase_set = generate_generalized_phases(by_inter)
    policy = parse_policy(doc.get("policy") or {"mode": FULL}, phase_set)
    settings = {}
    for key in ("delta", "rho_y"):
        if key in doc:
            settings[key] = Fraction(str(doc[key]))
    if "initial_phase" in doc:
        settings["initial_phase"] = tuple(doc["initial_phase"])
    return phase_set, policy, settings


def parse_policy(raw: dict, phases: PhaseSet) -> TransitionPolicy:
    mode = raw.get("mode", FULL)
    if mode == SEMI:
        seqs = raw.get("sequences") or {inter: phases.local_ids(inter) for inter in phases.intersections}
        policy = TransitionPolicy(SEMI, sequences=tuple((k, tuple(v)) for k, v in seqs.items()))
    elif mode == GROUPS:
        groups = tuple(
            tuple((tuple(b["phase"]), int(b["duration"])) for b in group) for group in raw.get("groups", [])
        )
        free = tuple(tuple(f) for f in raw.get("free", []))
        policy = TransitionPolicy(GROUPS, groups=groups, free=free)
    else:
        policy = TransitionPolicy(mode)
    _validate_policy(phases, policy)
    return policy


def policy_to_doc(policy: TransitionPolicy) -> dict:
    if policy.mode == SEMI:
        return {"mode": SEMI, "sequences": {k: list(v) for k, v in policy.sequences}}
    if policy.mode == GROUPS:
        return {
            "mode": GROUPS,
            "groups": [[{"phase": list(i), "duration": d} for i, d in g] for g in policy.groups],
            "free": [list(f) for f in policy.free],
        }
    return {"mode": policy.mode}
