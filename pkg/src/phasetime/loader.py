"""Dynamic network loading at one-second resolution.

Two engines share one simulator. The standard loader discharges controlled
links at the rate the signal plan grants; the customized loader drops that
limit and prices every controlled-link entry instead. Capacity is counted
with an integer credit per link, scaled so every rate is an exact integer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .network import PathAux, occupancy
from .ptgraph import GammaField, SignalPlan, plan_to_gamma


class HorizonExceeded(RuntimeError):
    """Some vehicles cannot reach their destination within the horizon."""

    def __init__(self, stuck, partial: "TrajectorySet"):
        self.stuck = sorted(stuck)
        self.partial = partial
        super().__init__(f"{len(self.stuck)} vehicle(s) still in the network at the horizon: {self.stuck}")


@dataclass(frozen=True)
class VehicleTrajectory:
    vid: int
    t0: int
    legs: tuple  # ((link index, entry second, exit second or None), ...)
    arrival: int | None

    @property
    def travel_time(self) -> int:
        return self.arrival - self.t0

    def position(self, t: int):
        """Link index occupied at second ``t``, "origin" or "arrived"."""
        if not self.legs or t < self.legs[0][1]:
            return "origin"
        for k, entry, exit_ in self.legs:
            if entry <= t and (exit_ is None or t < exit_):
                return k
        return "arrived"


@dataclass
class TrajectorySet:
    vehicles: dict  # vid -> VehicleTrajectory
    horizon: int

    def entries(self, link: int) -> list[tuple[int, int]]:
        out = [(entry, tr.vid) for tr in self.vehicles.values() for k, entry, _ in tr.legs if k == link]
        return sorted(out)

    def entry_counts(self, links: list[int]) -> np.ndarray:
        counts = np.zeros((len(links), self.horizon), dtype=np.int64)
        col = {k: c for c, k in enumerate(links)}
        for tr in self.vehicles.values():
            for k, entry, _ in tr.legs:
                if k in col and entry < self.horizon:
                    counts[col[k], entry] += 1
        return counts

    def rows(self, net) -> list[tuple]:
        out = []
        for vid in sorted(self.vehicles):
            for k, entry, exit_ in self.vehicles[vid].legs:
                a, b = net.links[k].key
                out.append((vid, a, b, entry, exit_))
        return out


@dataclass
class LoaderModel:
    """Static tables for the simulator, built once per scenario."""

    route: list  # per vehicle (position), list of link indices
    vids: list
    t0: list
    fftt: list
    storage: list  # per link, math.inf when unbounded
    order: list  # per link, vehicle positions in FIFO order
    slot: list  # per vehicle, {link: position along route}
    sweep: list  # link processing order (downstream first)
    scale: int  # credit units per vehicle
    regular_inc: list  # per link, credit added per second at saturation
    controlled_col: dict  # link index -> column of the controlled block
    horizon: int
    c: list  # free-flow path time per vehicle
    last: list  # index of the final leg per vehicle
    col_of: list  # per link, controlled column or None

    @classmethod
    def build(cls, scenario) -> "LoaderModel":
        net, aux = scenario.net, scenario.aux
        vids = [v.vid for v in scenario.vehicles]
        pos = {vid: n for n, vid in enumerate(vids)}
        den = 1
        for link in net.links:
            den = math.lcm(den, link.sat_rate.denominator)
        den *= scenario.factors.rho_y.denominator * scenario.factors.rho_ar.denominator
        den *= scenario.mapping.delta.denominator ** 2
        regular_inc = []
        for link in net.links:
            inc = link.sat_rate * den
            assert inc.denominator == 1
            regular_inc.append(int(inc))
        order = [[pos[vid] for vid in aux.fifo_order.get(k, [])] for k in range(len(net.links))]
        ctrl = {net.index[key]: c for c, key in enumerate(scenario.mapping.links)}
        return cls(
            route=[aux.route[vid] for vid in vids],
            vids=vids,
            t0=[v.t0 for v in scenario.vehicles],
            fftt=[link.fftt for link in net.links],
            storage=[link.storage if link.storage is not None else math.inf for link in net.links],
            order=order,
            slot=[{k: i for i, k in enumerate(aux.route[vid])} for vid in vids],
            sweep=net.downstream_first(),
            scale=den,
            regular_inc=regular_inc,
            controlled_col=ctrl,
            horizon=net.horizon,
            c=[aux.freeflow[vid] for vid in vids],
            last=[len(aux.route[vid]) - 1 for vid in vids],
            col_of=[ctrl.get(k) for k in range(len(net.links))],
        )

    def gamma_increments(self, gamma: GammaField, net) -> np.ndarray:
        """Credit added per (controlled column, second) under a gamma field."""
        inc = np.zeros((len(gamma.links), self.horizon), dtype=np.int64)
        for col, key in enumerate(gamma.links):
            sr = net.link(key).sat_rate
            for t, f in enumerate(gamma.values[col]):
                x = f * sr * self.scale
                if x.denominator != 1:
                    raise ValueError("capacity factor not representable on the credit scale")
                inc[col, t] = int(x)
        return inc


class DnlState:
    """Mutable simulation state; cheap to clone for tree searches."""

    __slots__ = ("model", "t", "pos", "ready", "entry", "ptr", "credit", "occ", "arrival", "live")

    def __init__(self, model: LoaderModel):
        self.model = model
        n = len(model.vids)
        self.t = 0
        self.pos = [-1] * n
        self.ready = list(model.t0)
        self.entry = [[None] * len(r) for r in model.route]
        self.ptr = [0] * len(model.fftt)
        self.credit = [0] * len(model.fftt)
        self.occ = [0] * len(model.fftt)
        self.arrival = [None] * n
        self.live = n

    def clone(self) -> "DnlState":
        s = DnlState.__new__(DnlState)
        s.model = self.model
        s.t = self.t
        s.pos = self.pos[:]
        s.ready = self.ready[:]
        s.entry = [e[:] for e in self.entry]
        s.ptr = self.ptr[:]
        s.credit = self.credit[:]
        s.occ = self.occ[:]
        s.arrival = self.arrival[:]
        s.live = self.live
        return s

    def step(self, ctrl_inc) -> None:
        """Advance one second. ``ctrl_inc[col]`` is the controlled credit, None = unlimited."""
        m = self.model
        t = self.t
        pos, ready, occ, credit, ptr = self.pos, self.ready, self.occ, self.credit, self.ptr
        arrival = self.arrival
        route = m.route
        for v, last in enumerate(m.last):
            if ready[v] == t and pos[v] == last and arrival[v] is None:
                arrival[v] = t
                occ[route[v][-1]] -= 1
                self.live -= 1
        q = m.scale
        slot, storage, fftt, entry = m.slot, m.storage, m.fftt, self.entry
        ctrl = m.col_of
        orders = m.order
        for k in m.sweep:
            order = orders[k]
            n = len(order)
            i = ptr[k]
            if i == n:
                continue  # nobody left to enter; credit no longer matters
            col = ctrl[k]
            if col is None:
                inc = m.regular_inc[k]
            else:
                inc = ctrl_inc[col] if ctrl_inc is not None else None
            limited = inc is not None
            if limited:
                credit[k] += inc
                if credit[k] < q:
                    continue
            while i < n:
                if limited and credit[k] < q:
                    break
                v = order[i]
                idx = slot[v][k]
                if pos[v] != idx - 1 or ready[v] > t or occ[k] >= storage[k]:
                    break
                if idx > 0:
                    occ[route[v][idx - 1]] -= 1
                occ[k] += 1
                pos[v] = idx
                entry[v][idx] = t
                ready[v] = t + fftt[k]
                i += 1
                if limited:
                    credit[k] -= q
            ptr[k] = i
            if limited and credit[k] >= q:
                credit[k] %= q
        self.t = t + 1

    def finish(self) -> None:
        """Release vehicles arriving exactly at the horizon."""
        m = self.model
        t = self.t
        for v in range(len(m.vids)):
            if self.arrival[v] is None and self.pos[v] == len(m.route[v]) - 1 and self.ready[v] == t:
                self.arrival[v] = t
                self.occ[m.route[v][-1]] -= 1
                self.live -= 1

    def trajectories(self) -> TrajectorySet:
        m = self.model
        out = {}
        for v, vid in enumerate(m.vids):
            legs = []
            r = m.route[v]
            for i, k in enumerate(r):
                e = self.entry[v][i]
                if e is None:
                    break
                if i + 1 < len(r):
                    nxt = self.entry[v][i + 1]
                else:
                    nxt = self.arrival[v]
                legs.append((k, e, nxt))
            out[vid] = VehicleTrajectory(vid, m.t0[v], tuple(legs), self.arrival[v])
        return TrajectorySet(out, m.horizon)

    def sunk_delay(self) -> int:
        """Delay already locked in: arrivals plus the unavoidable part of live vehicles."""
        m = self.model
        total = 0
        for v in range(len(m.vids)):
            if self.arrival[v] is not None:
                total += self.arrival[v] - m.t0[v] - m.c[v]
            else:
                r = m.route[v]
                rest = sum(m.fftt[k] for k in r[self.pos[v] + 1:])
                total += max(self.ready[v], self.t) + rest - m.t0[v] - m.c[v]
        return total


def _run(model: LoaderModel, inc: np.ndarray | None) -> TrajectorySet:
    st = DnlState(model)
    for t in range(model.horizon):
        if st.live == 0:
            break
        st.step(None if inc is None else inc[:, t])
    st.finish()
    traj = st.trajectories()
    stuck = [model.vids[v] for v in range(len(model.vids)) if st.arrival[v] is None]
    if stuck:
        raise HorizonExceeded(stuck, traj)
    return traj


def standard_dnl(scenario, plan: SignalPlan, model: LoaderModel | None = None):
    """Feasible loading under ``plan``; returns (trajectories, MOE report)."""
    model = model or LoaderModel.build(scenario)
    gamma = plan_to_gamma(plan, scenario.mapping, scenario.factors)
    traj = _run(model, model.gamma_increments(gamma, scenario.net))
    return traj, compute_moe(traj, plan, scenario, gamma)


@dataclass
class CustomizedResult:
    trajectories: TrajectorySet
    L11: float  # delay-scale value: sum of delays plus accrued prices
    arrival_sum: int
    entries: np.ndarray  # controlled column x second


def customized_dnl(scenario, lam: np.ndarray, model: LoaderModel | None = None,
                   trajectories: TrajectorySet | None = None) -> CustomizedResult:
    """Loading with controlled-link capacity removed and entries priced by ``lam``.

    Vehicles move greedily at the earliest second, so the trajectories do
    not depend on ``lam``; pass a previous result's ``trajectories`` to reuse
    them.
    """
    if np.any(lam < 0):
        raise ValueError("multipliers must be nonnegative")
    model = model or LoaderModel.build(scenario)
    traj = trajectories if trajectories is not None else _run(model, None)
    cols = [scenario.net.index[key] for key in scenario.mapping.links]
    entries = traj.entry_counts(cols)
    delay = 0
    arrivals = 0
    for v, vid in enumerate(model.vids):
        tr = traj.vehicles[vid]
        delay += tr.arrival - tr.t0 - model.c[v]
        arrivals += tr.arrival
    price = float(np.sum(entries * lam)) if entries.size else 0.0
    return CustomizedResult(traj, delay + price, arrivals, entries)


@dataclass
class MoeReport:
    total_travel_time: int
    total_delay: int
    transitions: int
    arrivals_during_green: dict
    arrivals_during_non_green: dict
    delays: dict  # vid -> seconds
    max_delay_by_group: dict

    @property
    def objective(self) -> int:
        return self.total_delay + self.transitions

    def to_doc(self) -> dict:
        return {
            "total_travel_time": self.total_travel_time,
            "total_delay": self.total_delay,
            "transitions": self.transitions,
            "objective": self.objective,
            "arrivals_during_green": self.arrivals_during_green,
            "arrivals_during_non_green": self.arrivals_during_non_green,
            "max_delay_by_group": self.max_delay_by_group,
            "delays": {str(k): v for k, v in sorted(self.delays.items())},
        }


def compute_moe(traj: TrajectorySet, plan: SignalPlan, scenario, gamma: GammaField | None = None) -> MoeReport:
    gamma = gamma or plan_to_gamma(plan, scenario.mapping, scenario.factors)
    net, aux = scenario.net, scenario.aux
    groups = {v.vid: v.group or "all" for v in scenario.vehicles}
    inters = sorted({link.intersection for link in net.controlled})
    green = {i: 0 for i in inters}
    other = {i: 0 for i in inters}
    col = {net.index[key]: c for c, key in enumerate(gamma.links)}
    delays = {}
    ttt = 0
    for vid, tr in traj.vehicles.items():
        ttt += tr.arrival - tr.t0
        delays[vid] = tr.arrival - tr.t0 - aux.freeflow[vid]
        for k, entry, _ in tr.legs:
            if k not in col:
                continue
            inter = net.links[k].intersection
            if entry < traj.horizon and gamma.status[col[k]][entry] == "green":
                green[inter] += 1
            else:
                other[inter] += 1
    worst: dict = {}
    for vid, d in delays.items():
        worst[groups[vid]] = max(worst.get(groups[vid], 0), d)
    return MoeReport(ttt, sum(delays.values()), plan.transitions, green, other, delays, worst)


@dataclass(frozen=True)
class Violation:
    constraint: str  # cap3p | cap4 | storage5 | fifo6 | conserve7
    link: tuple | None
    t: int | None
    vehicles: tuple = ()
    detail: str = ""


def validate_feasible(traj: TrajectorySet, plan: SignalPlan, scenario, model: LoaderModel | None = None) -> list[Violation]:
    """Every capacity, storage, FIFO and conservation breach in ``traj``."""
    net, aux = scenario.net, scenario.aux
    model = model or LoaderModel.build(scenario)
    H = net.horizon
    out: list[Violation] = []
    gamma = plan_to_gamma(plan, scenario.mapping, scenario.factors)
    ctrl_inc = model.gamma_increments(gamma, net)

    by_vid = {v.vid: v for v in scenario.vehicles}
    for vid, v in by_vid.items():
        tr = traj.vehicles.get(vid)
        route = aux.route[vid]
        if tr is None:
            out.append(Violation("conserve7", None, None, (vid,), "vehicle missing"))
            continue
        if [k for k, _, _ in tr.legs] != route:
            out.append(Violation("conserve7", None, None, (vid,), "legs do not follow the path"))
            continue
        if tr.legs[0][1] < v.t0:
            out.append(Violation("conserve7", net.links[route[0]].key, tr.legs[0][1], (vid,), "entry before departure"))
        for i, (k, entry, exit_) in enumerate(tr.legs):
            key = net.links[k].key
            if exit_ is None or exit_ - entry < net.links[k].fftt:
                out.append(Violation("conserve7", key, entry, (vid,), "left the link faster than free flow"))
            if i + 1 < len(tr.legs) and exit_ != tr.legs[i + 1][1]:
                out.append(Violation("conserve7", key, exit_, (vid,), "gap between consecutive links"))
        if tr.arrival is None or tr.arrival > H or tr.legs[-1][2] != tr.arrival:
            out.append(Violation("conserve7", net.links[route[-1]].key, tr.arrival, (vid,), "no arrival within horizon"))
        elif tr.arrival != tr.legs[-1][1] + net.links[route[-1]].fftt:
            out.append(Violation("conserve7", net.links[route[-1]].key, tr.arrival, (vid,), "held on the last link"))

    q = model.scale
    for k, link in enumerate(net.links):
        ents = traj.entries(k)
        per_t: dict = {}
        for t, vid in ents:
            per_t.setdefault(t, []).append(vid)
        col = model.controlled_col.get(k)
        family = "cap3p" if col is not None else "cap4"
        credit = 0
        for t in range(H):
            credit += int(ctrl_inc[col, t]) if col is not None else model.regular_inc[k]
            n = len(per_t.get(t, ()))
            credit -= n * q
            if credit < 0:
                out.append(Violation(family, link.key, t, tuple(per_t[t]), "entries exceed discharge capacity"))
                credit = 0
            elif credit >= q:
                credit %= q
        for t in per_t:
            if t >= H:
                out.append(Violation(family, link.key, t, tuple(per_t[t]), "entry at or after the horizon"))
        if link.storage is not None:
            for t in sorted({e for e, _ in ents}):
                occ = occupancy(traj, k, t)
                if occ > link.storage:
                    out.append(Violation("storage5", link.key, t, (), f"occupancy {occ} > {link.storage}"))
        first = {vid: t for t, vid in ents}
        order = aux.fifo_order.get(k, [])
        for a, b in zip(order[:-1], order[1:]):
            if a in first and b in first and first[a] > first[b]:
                out.append(Violation("fifo6", link.key, first[b], (a, b), "overtaking"))
    return out
