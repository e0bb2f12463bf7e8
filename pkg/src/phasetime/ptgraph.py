"""Generalized phase-time network: arcs, arc costs and least-cost signal plans.

A vertex ``(p, tau)`` means generalized phase ``p`` turns green at second
``tau``. A transition arc ``(p, tau, q, h)`` holds ``p`` green, runs its
yellow and all-red, and hands over to ``q`` at ``h``. Every plan ends with a
terminal arc ``(p, tau, None, H)`` in which the last phase rests green up to
the horizon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from .network import RoadNetwork
from .phases import GROUPS, MappingMatrix, PhaseSet, TransitionPolicy, entry_points, successors

GREEN, YELLOW, ALLRED = "green", "yellow", "allred"
TRANSITION_PENALTY = 1.0


class PlanInfeasible(RuntimeError):
    """No source-to-sink path exists in the phase-time network."""


@dataclass(frozen=True)
class Factors:
    rho_y: Fraction = Fraction(1, 2)
    rho_g: Fraction = Fraction(1)
    rho_ar: Fraction = Fraction(0)


@dataclass(frozen=True)
class PhaseTimeArc:
    p: tuple
    tau: int
    q: tuple | None
    h: int
    yellow: int = 0
    allred: int = 0

    @property
    def terminal(self) -> bool:
        return self.q is None

    @property
    def green_end(self) -> int:
        return self.h - self.yellow - self.allred

    @property
    def yellow_end(self) -> int:
        return self.h - self.allred

    @property
    def green(self) -> int:
        return self.green_end - self.tau

    def window(self, t: int) -> str:
        if not self.tau <= t < self.h:
            raise ValueError(f"second {t} outside arc [{self.tau}, {self.h})")
        if t < self.green_end:
            return GREEN
        if t < self.yellow_end:
            return YELLOW
        return ALLRED

    def key(self) -> tuple:
        return (self.p, self.tau, self.q if self.q is not None else (), self.h)

    def to_doc(self) -> dict:
        return {
            "p": list(self.p),
            "tau": self.tau,
            "q": list(self.q) if self.q is not None else None,
            "h": self.h,
            "green": [self.tau, self.green_end],
            "yellow": [self.green_end, self.yellow_end],
            "allred": [self.yellow_end, self.h],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PhaseTimeArc":
        q = tuple(doc["q"]) if doc.get("q") is not None else None
        y = doc["yellow"][1] - doc["yellow"][0]
        ar = doc["allred"][1] - doc["allred"][0]
        return cls(tuple(doc["p"]), doc["tau"], q, doc["h"], y, ar)


@dataclass
class SignalPlan:
    arcs: tuple[PhaseTimeArc, ...]
    horizon: int
    cost: float | None = None

    def __post_init__(self):
        self.arcs = tuple(self.arcs)
        self.check()

    def check(self) -> None:
        if not self.arcs:
            raise ValueError("empty plan")
        t = 0
        for k, arc in enumerate(self.arcs):
            if arc.tau != t:
                kind = "gap" if arc.tau > t else "overlap"
                raise ValueError(f"plan {kind} at second {t} (arc {k} starts at {arc.tau})")
            if arc.h < arc.tau or arc.green_end < arc.tau:
                raise ValueError(f"arc {k} has negative duration")
            if k + 1 < len(self.arcs):
                if arc.terminal:
                    raise ValueError("terminal arc before the end of the plan")
                if self.arcs[k + 1].p != arc.q:
                    raise ValueError(f"arc {k} hands over to {arc.q} but arc {k + 1} runs {self.arcs[k + 1].p}")
            t = arc.h
        if not self.arcs[-1].terminal or t != self.horizon:
            raise ValueError("plan must end with a terminal arc at the horizon")

    @property
    def transitions(self) -> int:
        return sum(1 for a in self.arcs if not a.terminal)

    def covering(self, t: int) -> PhaseTimeArc:
        for arc in self.arcs:
            if arc.tau <= t < arc.h:
                return arc
        raise ValueError(f"second {t} not covered")

    def timeline(self) -> list[tuple[PhaseTimeArc, str]]:
        out = []
        for arc in self.arcs:
            for t in range(arc.tau, arc.h):
                out.append((arc, arc.window(t)))
        return out

    def to_doc(self) -> dict:
        return {
            "horizon": self.horizon,
            "cost": self.cost,
            "transitions": self.transitions,
            "arcs": [a.to_doc() for a in self.arcs],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SignalPlan":
        return cls(tuple(PhaseTimeArc.from_doc(a) for a in doc["arcs"]), doc["horizon"], doc.get("cost"))


def window_factor(m_p, m_q, window: str, factors: Factors):
    """Capacity factor of a link during one window of an arc.

    During clearance a link kept green by both phases continues at the
    green rate; otherwise the yellow (or all-red) rate applies to p's share.
    """
    if window == GREEN or m_q is None:
        return factors.rho_g * m_p
    rho = factors.rho_y if window == YELLOW else factors.rho_ar
    return rho * m_p * (1 - m_q) + factors.rho_g * m_p * m_q


def arc_cost(arc: PhaseTimeArc, lam: np.ndarray, mapping: MappingMatrix, net: RoadNetwork, factors: Factors) -> float:
    """Arc cost evaluated second by second (reference form).

    ``lam`` has one row per controlled link (mapping column order) and one
    column per second of the horizon.
    """
    if arc.tau < 0 or arc.h > lam.shape[1]:
        raise ValueError("arc outside horizon")
    total = 0.0 if arc.terminal else TRANSITION_PENALTY
    for col, key in enumerate(mapping.links):
        sr = net.link(key).sat_rate
        m_p = mapping.m(key, arc.p)
        m_q = mapping.m(key, arc.q) if arc.q is not None else None
        for t in range(arc.tau, arc.h):
            f = window_factor(m_p, m_q, arc.window(t), factors)
            if f:
                total -= float(lam[col, t]) * float(f * sr)
    return total


class CostModel:
    """Prefix-summed arc costs for one multiplier field."""

    def __init__(self, lam: np.ndarray, mapping: MappingMatrix, net: RoadNetwork, factors: Factors):
        self.horizon = lam.shape[1]
        sr = np.array([float(net.link(k).sat_rate) for k in mapping.links], dtype=float)
        w = lam * sr[:, None] if len(sr) else np.zeros((0, self.horizon))
        m = mapping.array
        ry, rar = float(factors.rho_y), float(factors.rho_ar)
        both = m[:, None, :] * m[None, :, :]
        fy = ry * m[:, None, :] * (1 - m[None, :, :]) + both
        far = rar * m[:, None, :] * (1 - m[None, :, :]) + both
        self.g = self._prefix(m @ w)
        self.y = self._prefix(np.einsum("pql,lt->pqt", fy, w))
        self.a = self._prefix(np.einsum("pql,lt->pqt", far, w))

    @staticmethod
    def _prefix(x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[:-1] + (x.shape[-1] + 1,))
        np.cumsum(x, axis=-1, out=out[..., 1:])
        return out

    def transition(self, pr, tau, qr, gend, y, ar):
        """Cost of arcs p->q starting at tau; ``gend`` may be an array."""
        yend = gend + y
        h = yend + ar
        reward = (self.g[pr, gend] - self.g[pr, tau]) + (self.y[pr, qr, yend] - self.y[pr, qr, gend])
        reward = reward + (self.a[pr, qr, h] - self.a[pr, qr, yend])
        return TRANSITION_PENALTY - reward

    def rest(self, pr, tau, end):
        return -(self.g[pr, end] - self.g[pr, tau])


@dataclass(frozen=True)
class _Entity:
    first: tuple
    last: tuple
    blocks: tuple = ()  # ((phase index, span), ...); empty for a free phase


@dataclass
class Move:
    arcs: tuple
    target: int | None  # entity id, None for the sink
    h: int
    state: tuple | None = None


@dataclass
class PsiGraph:
    """Lazy phase-time network for one phase set, policy and horizon.

    ``clearance_in_step`` selects how the label-setting step length is read:
    False (default) takes it as green time, so the successor vertex lands at
    ``tau + step + yellow + allred``; True takes it as the whole arc span.
    """

    phases: PhaseSet
    policy: TransitionPolicy
    horizon: int
    initial: tuple | None = None
    initial_state: tuple | None = None
    clearance_in_step: bool = False
    entities: list = field(init=False)
    succ: list = field(init=False)
    start: list = field(init=False)

    def __post_init__(self):
        ps = self.phases
        if self.initial is None:
            first = entry_points(self.policy)[0] if self.policy.mode == GROUPS else ps.phases[0].index
            self.initial = first
        self.initial = tuple(self.initial)
        if self.initial_state is None:
            self.initial_state = (0,) * len(ps.intersections)
        if self.policy.mode == GROUPS:
            ents = [_Entity(tuple(g[0][0]), tuple(g[-1][0]), tuple((tuple(i), d) for i, d in g)) for g in self.policy.groups]
            ents += [_Entity(tuple(f), tuple(f)) for f in self.policy.free]
            self.entities = ents
            self.succ = [[k for k, b in enumerate(ents) if b.first != a.last] for a in ents]
        else:
            self.entities = [_Entity(p.index, p.index) for p in ps]
            pos = {p.index: k for k, p in enumerate(ps)}
            self.succ = [[pos[q.index] for q in successors(ps, p, self.policy)] for p in ps]
        self.start = [k for k, e in enumerate(self.entities) if e.first == self.initial]
        if not self.start:
            raise ValueError(f"initial phase {self.initial} is not an entry point of the policy")
        self.local_gmax = np.array(
            [[ps.local(p, i).gmax for i in range(len(ps.intersections))] for p in ps], dtype=float
        )

    # -- helpers ---------------------------------------------------------
    def phase(self, index):
        return self.phases.get(index)

    def row(self, index) -> int:
        return self.phases.position[tuple(index)]

    def _span(self, step: int, clr: int) -> int:
        return step if self.clearance_in_step else step + clr

    def _step_cap(self, p, state) -> float:
        cap = p.gmax
        if state is not None:
            cap = min(cap, float(np.min(self.local_gmax[self.row(p.index)] - np.asarray(state))))
        return cap

    @staticmethod
    def _carry(p_index, q_index, state, step):
        if state is None:
            return None
        return tuple(r + step if a == b else 0 for r, a, b in zip(state, p_index, q_index))

    def _fits(self, p_index, state, step) -> bool:
        if state is None:
            return True
        lim = self.local_gmax[self.row(p_index)]
        return all(r + step <= g for r, g in zip(state, lim))

    # -- moves -----------------------------------------------------------
    def moves(self, e: int, tau: int, state: tuple | None = None) -> Iterator[Move]:
        """Every non-terminal move out of vertex (entity ``e``, ``tau``)."""
        ent = self.entities[e]
        H = self.horizon
        if not ent.blocks:
            p = self.phase(ent.first)
            clr = p.clearance
            cap = self._step_cap(p, state)
            for e2 in self.succ[e]:
                q = self.entities[e2].first
                step = p.gmin
                while step <= cap:
                    h = tau + self._span(step, clr)
                    if h > H:
                        break
                    green = h - clr - tau
                    if green >= 0:
                        arc = PhaseTimeArc(p.index, tau, q, h, p.yellow, p.allred)
                        yield Move((arc,), e2, h, self._carry(p.index, q, state, step))
                    step += 1
            return
        # scripted group: fixed spans, free choice of the next entity
        arcs, s, st = self._group_prefix(ent, tau, state)
        if arcs is None:
            return
        last, span = ent.blocks[-1]
        lp = self.phase(last)
        h = s + span
        step = span if self.clearance_in_step else span - lp.clearance
        if h > H or not self._fits(last, st, step):
            return
        for e2 in self.succ[e]:
            q = self.entities[e2].first
            arc = PhaseTimeArc(last, s, q, h, lp.yellow, lp.allred)
            yield Move(arcs + (arc,), e2, h, self._carry(last, q, st, step))

    def _group_prefix(self, ent, tau, state):
        arcs = ()
        s = tau
        st = state
        for k in range(len(ent.blocks) - 1):
            idx, span = ent.blocks[k]
            nxt = ent.blocks[k + 1][0]
            p = self.phase(idx)
            step = span if self.clearance_in_step else span - p.clearance
            if s + span > self.horizon or not self._fits(idx, st, step):
                return None, s, st
            arcs += (PhaseTimeArc(idx, s, nxt, s + span, p.yellow, p.allred),)
            st = self._carry(idx, nxt, st, step)
            s += span
        return arcs, s, st

    def terminal(self, e: int, tau: int, state: tuple | None = None) -> Move | None:
        """The move resting to the horizon from (``e``, ``tau``), if allowed."""
        ent = self.entities[e]
        H = self.horizon
        if not ent.blocks:
            p = self.phase(ent.first)
            if H - tau <= self._step_cap(p, state):
                return Move((PhaseTimeArc(p.index, tau, None, H),), None, H)
            return None
        arcs = ()
        s = tau
        st = state
        for k, (idx, span) in enumerate(ent.blocks):
            p = self.phase(idx)
            green = span - p.clearance
            if s <= H <= s + green:
                if not self._fits(idx, st, H - s):
                    return None
                return Move(arcs + (PhaseTimeArc(idx, s, None, H),), None, H)
            if k + 1 == len(ent.blocks) or s + span > H:
                return None
            nxt = ent.blocks[k + 1][0]
            step = span if self.clearance_in_step else green
            if not self._fits(idx, st, step):
                return None
            arcs += (PhaseTimeArc(idx, s, nxt, s + span, p.yellow, p.allred),)
            st = self._carry(idx, nxt, st, step)
            s += span
        return None

    def materialize(self) -> tuple[list, list]:
        """All reachable vertices and moves (local max greens not tracked)."""
        seen = {(e, 0) for e in self.start}
        order = sorted(seen, key=lambda v: (v[1], v[0]))
        edges = []
        k = 0
        while k < len(order):
            e, tau = order[k]
            k += 1
            term = self.terminal(e, tau)
            if term is not None:
                edges.append(((e, tau), None, term.arcs))
            for mv in self.moves(e, tau):
                v = (mv.target, mv.h)
                edges.append(((e, tau), v, mv.arcs))
                if v not in seen:
                    seen.add(v)
                    order.append(v)
        return order, edges


def moves_cost(arcs, costs: CostModel, graph: PsiGraph) -> float:
    total = 0.0
    for a in arcs:
        pr = graph.row(a.p)
        if a.terminal:
            total += costs.rest(pr, a.tau, a.h)
        else:
            total += costs.transition(pr, a.tau, graph.row(a.q), a.green_end, a.yellow, a.allred)
    return float(total)


def shortest_plan(graph: PsiGraph, costs: CostModel, gmax_local: str = "ignore", labels: str = "pareto") -> SignalPlan:
    """Least-cost source-to-sink path by a forward scan over start seconds.

    With ``gmax_local="enforce"`` each label carries the running green time
    of every intersection's active local phase, and a move is kept only when
    no local phase would exceed its own maximum green. ``labels="single"``
    keeps one label per vertex (first found wins ties); ``"pareto"`` keeps
    every label not dominated in both cost and running greens, which makes
    the enforced search exact.
    """
    if gmax_local not in ("ignore", "enforce"):
        raise ValueError(f"gmax_local must be 'ignore' or 'enforce', not {gmax_local!r}")
    if labels not in ("single", "pareto"):
        raise ValueError(f"labels must be 'single' or 'pareto', not {labels!r}")
    enforce = gmax_local == "enforce"
    if enforce and labels == "pareto" and np.isfinite(graph.local_gmax).any():
        return _pareto_plan(graph, costs)
    H = graph.horizon
    E = len(graph.entities)
    M = len(graph.phases.intersections)
    lc = np.full((E, H + 1), math.inf)
    pe = np.full((E, H + 1), -1, dtype=np.int64)
    pt = np.full((E, H + 1), -1, dtype=np.int64)
    st = np.zeros((E, H + 1, M), dtype=np.int64) if enforce else None
    for e in graph.start:
        lc[e, 0] = 0.0
        if enforce:
            st[e, 0] = graph.initial_state
    best = math.inf
    best_end = None
    fast = graph.policy.mode != GROUPS
    for tau in range(H + 1):
        for e in range(E):
            base = lc[e, tau]
            if base == math.inf:
                continue
            state = tuple(int(x) for x in st[e, tau]) if enforce else None
            term = graph.terminal(e, tau, state)
            if term is not None:
                c = base + moves_cost(term.arcs, costs, graph)
                if c < best:
                    best, best_end = c, (e, tau, term.arcs)
            if tau == H:
                continue
            if fast:
                _relax_phase(graph, costs, e, tau, base, state, lc, pe, pt, st)
            else:
                for mv in graph.moves(e, tau, state):
                    c = base + moves_cost(mv.arcs, costs, graph)
                    if c < lc[mv.target, mv.h]:
                        lc[mv.target, mv.h] = c
                        pe[mv.target, mv.h] = e
                        pt[mv.target, mv.h] = tau
                        if enforce:
                            st[mv.target, mv.h] = mv.state
    if best_end is None:
        raise PlanInfeasible("no feasible path to the sink within the horizon")
    e, tau, tail = best_end
    chain = [tail]
    while pe[e, tau] >= 0:
        e0, t0 = int(pe[e, tau]), int(pt[e, tau])
        chain.append(_rebuild(graph, e0, t0, e, tau, st[e0, t0] if enforce else None))
        e, tau = e0, t0
    arcs = tuple(a for seg in reversed(chain) for a in seg)
    return SignalPlan(arcs, H, float(best))


@dataclass
class _Label:
    cost: float
    state: tuple
    pred: "_Label | None"
    e: int
    tau: int


def _dominated(bucket: list, cost: float, state: tuple) -> bool:
    for lab in bucket:
        if lab.cost <= cost and all(a <= b for a, b in zip(lab.state, state)):
            return True
    return False


def _insert(bucket: list, lab: _Label) -> bool:
    if _dominated(bucket, lab.cost, lab.state):
        return False
    bucket[:] = [x for x in bucket if not (lab.cost <= x.cost and all(a <= b for a, b in zip(lab.state, x.state)))]
    bucket.append(lab)
    return True


def _pareto_plan(graph: PsiGraph, costs: CostModel) -> SignalPlan:
    H = graph.horizon
    finite = np.isfinite(graph.local_gmax)
    buckets: dict = {}
    zero = (0,) * len(graph.phases.intersections)
    zero_cost = np.full((len(graph.entities), H + 1), math.inf)

    def norm(e, state):
        # running greens of unbounded local phases never prune anything
        row = graph.row(graph.entities[e].first)
        return tuple(r if finite[row, i] else 0 for i, r in enumerate(state))

    for e in graph.start:
        _insert(buckets.setdefault((e, 0), []), _Label(0.0, norm(e, graph.initial_state), None, e, 0))
    best = math.inf
    best_end = None
    fast = graph.policy.mode != GROUPS
    for tau in range(H + 1):
        for e in range(len(graph.entities)):
            for lab in buckets.pop((e, tau), ()):
                term = graph.terminal(e, tau, lab.state)
                if term is not None:
                    c = lab.cost + moves_cost(term.arcs, costs, graph)
                    if c < best:
                        best, best_end = c, (lab, term.arcs)
                if tau == H:
                    continue
                if not fast:
                    for mv in graph.moves(e, tau, lab.state):
                        c = lab.cost + moves_cost(mv.arcs, costs, graph)
                        state = norm(mv.target, mv.state)
                        if _insert(buckets.setdefault((mv.target, mv.h), []), _Label(c, state, lab, mv.target, mv.h)):
                            if state == zero:
                                zero_cost[mv.target, mv.h] = min(zero_cost[mv.target, mv.h], c)
                    continue
                p = graph.phase(graph.entities[e].first)
                cap = graph._step_cap(p, lab.state)
                hi = int(min(cap, H))
                if hi < p.gmin:
                    continue
                steps = np.arange(p.gmin, hi + 1)
                h = tau + (steps if graph.clearance_in_step else steps + p.clearance)
                ok = (h <= H) & (h - p.clearance >= tau)
                steps, h = steps[ok], h[ok]
                if not len(h):
                    continue
                pr = graph.row(p.index)
                base_state = np.asarray(lab.state)
                for e2 in graph.succ[e]:
                    q = graph.entities[e2].first
                    qr = graph.row(q)
                    cand = lab.cost + costs.transition(pr, tau, qr, h - p.clearance, p.yellow, p.allred)
                    carry = np.array([a == b for a, b in zip(p.index, q)]) & finite[qr]
                    # a zero-state label dominates any candidate that is not cheaper
                    keep = np.nonzero(cand < zero_cost[e2, h])[0]
                    for k in keep:
                        hk = int(h[k])
                        c = float(cand[k])
                        if carry.any():
                            state = tuple(int(x) for x in np.where(carry, base_state + int(steps[k]), 0))
                        else:
                            state = zero
                        bucket = buckets.setdefault((e2, hk), [])
                        if _insert(bucket, _Label(c, state, lab, e2, hk)) and state == zero:
                            zero_cost[e2, hk] = c
    if best_end is None:
        raise PlanInfeasible("no feasible path to the sink within the horizon")
    lab, tail = best_end
    chain = [tail]
    while lab.pred is not None:
        prev = lab.pred
        chain.append(_rebuild_state(graph, prev, lab))
        lab = prev
    arcs = tuple(a for seg in reversed(chain) for a in seg)
    return SignalPlan(arcs, H, float(best))


def _rebuild_state(graph, prev: _Label, lab: _Label):
    for mv in graph.moves(prev.e, prev.tau, prev.state):
        if mv.target == lab.e and mv.h == lab.h if hasattr(lab, "h") else mv.h == lab.tau:
            if mv.target == lab.e:
                return mv.arcs
    raise RuntimeError("predecessor move not found")


def _relax_phase(graph, costs, e, tau, base, state, lc, pe, pt, st):
    ent = graph.entities[e]
    p = graph.phase(ent.first)
    pr = graph.row(p.index)
    clr = p.clearance
    H = graph.horizon
    cap = graph._step_cap(p, state)
    hi = int(min(cap, H))
    if hi < p.gmin:
        return
    steps = np.arange(p.gmin, hi + 1)
    h = tau + (steps if graph.clearance_in_step else steps + clr)
    ok = (h <= H) & (h - clr >= tau)
    if not ok.any():
        return
    steps, h = steps[ok], h[ok]
    gend = h - clr
    for e2 in graph.succ[e]:
        q = graph.entities[e2].first
        qr = graph.row(q)
        cand = base + costs.transition(pr, tau, qr, gend, p.yellow, p.allred)
        better = cand < lc[e2, h]
        if not better.any():
            continue
        hb = h[better]
        lc[e2, hb] = cand[better]
        pe[e2, hb] = e
        pt[e2, hb] = tau
        if st is not None:
            same = np.array([a == b for a, b in zip(p.index, q)])
            sb = steps[better][:, None]
            st[e2, hb] = np.where(same[None, :], np.asarray(state)[None, :] + sb, 0)


def _rebuild(graph, e0, t0, e, h, state):
    st = tuple(int(x) for x in state) if state is not None else None
    for mv in graph.moves(e0, t0, st):
        if mv.target == e and mv.h == h:
            return mv.arcs
    raise RuntimeError("predecessor move not found")


@dataclass
class GammaField:
    """Per controlled link and second: capacity factor and signal status."""

    links: list
    values: list  # values[col][t] -> Fraction
    status: list  # status[col][t] -> "green" | "yellow" | "allred" | "red"

    def array(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.values], dtype=float).reshape(
            len(self.links), -1 if self.values else 0
        )


def plan_to_gamma(plan: SignalPlan, mapping: MappingMatrix, factors: Factors) -> GammaField:
    """Open/close factor of every controlled link under ``plan``.

    Status is "green" whenever the link runs at the green rate, including
    clearance seconds in which it stays green into the next phase.
    """
    plan.check()
    H = plan.horizon
    values = [[Fraction(0)] * H for _ in mapping.links]
    status = [["red"] * H for _ in mapping.links]
    for arc in plan.arcs:
        for col, key in enumerate(mapping.links):
            m_p = mapping.m(key, arc.p)
            m_q = mapping.m(key, arc.q) if arc.q is not None else None
            for t in range(arc.tau, arc.h):
                win = arc.window(t)
                f = window_factor(m_p, m_q, win, factors)
                values[col][t] = f
                if win == GREEN:
                    status[col][t] = GREEN if m_p > 0 else "red"
                elif m_p > 0 and m_q:
                    status[col][t] = GREEN
                elif m_p > 0:
                    status[col][t] = win
    return GammaField(list(mapping.links), values, status)
