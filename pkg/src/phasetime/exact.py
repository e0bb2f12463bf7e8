"""Ground truth for small instances.

``brute_force_optimum`` walks every phase-time path with depth-first search,
simulating the standard loader incrementally along the way.
``export_milp`` writes the full time-indexed integer program as LP text, and
``check_solution`` evaluates any 0/1 assignment against its rows.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .loader import DnlState, LoaderModel, TrajectorySet, standard_dnl
from .ptgraph import ALLRED, GREEN, YELLOW, PsiGraph, SignalPlan, window_factor


class LimitsExceeded(ValueError):
    def __init__(self, report: dict):
        self.report = report
        super().__init__("instance too large: " + ", ".join(f"{k}={v}" for k, v in report.items()))


@dataclass(frozen=True)
class Limits:
    max_phases: int = 4
    max_horizon: int = 60
    max_vehicles: int = 8


@dataclass
class OracleResult:
    plan: SignalPlan | None
    objective: float  # total delay + transitions; inf when nothing is feasible
    total_delay: int | None
    transitions: int | None
    nodes: int  # search nodes expanded

    def to_doc(self) -> dict:
        return {
            "objective": self.objective if math.isfinite(self.objective) else None,
            "total_delay": self.total_delay,
            "transitions": self.transitions,
            "nodes": self.nodes,
            "plan": self.plan.to_doc() if self.plan else None,
        }


def _increments(scenario, model: LoaderModel):
    """Credit per controlled column for each (p, q, window) combination."""
    net, mp, fac = scenario.net, scenario.mapping, scenario.factors
    sr = [net.link(k).sat_rate for k in mp.links]
    cache: dict = {}

    def get(p, q, win):
        key = (p, q, win)
        if key not in cache:
            vec = []
            for col, link in enumerate(mp.links):
                m_p = mp.m(link, p)
                m_q = mp.m(link, q) if q is not None else None
                x = window_factor(m_p, m_q, win, fac) * sr[col] * model.scale
                vec.append(int(x))
            cache[key] = vec
        return cache[key]

    return get


def _min_transitions(graph: PsiGraph) -> np.ndarray:
    """Fewest transitions from each (entity, second) to the sink, ignoring local max greens."""
    H = graph.horizon
    E = len(graph.entities)
    out = np.full((E, H + 1), math.inf)
    for tau in range(H, -1, -1):
        for e in range(E):
            if graph.terminal(e, tau) is not None:
                out[e, tau] = 0
                continue
            best = math.inf
            for mv in graph.moves(e, tau):
                best = min(best, len(mv.arcs) + out[mv.target, mv.h])
            out[e, tau] = best
    return out


def brute_force_optimum(scenario, gmax_local: str = "enforce", limits: Limits = Limits()) -> OracleResult:
    """Exact minimum of total delay + transitions over every signal plan.

    Plans are explored in lexicographic order (resting first, then by next
    phase, then by switch second), so the first optimum found is returned.
    Branches are cut when their optimistic completion cannot beat the
    incumbent, or when an identical search state was reached more cheaply.
    """
    report = {}
    if len(scenario.phases) > limits.max_phases:
        report["phases"] = len(scenario.phases)
    if scenario.horizon > limits.max_horizon:
        report["horizon"] = scenario.horizon
    if len(scenario.vehicles) > limits.max_vehicles:
        report["vehicles"] = len(scenario.vehicles)
    if report:
        report.update(limits=f"{limits.max_phases} phases / H {limits.max_horizon} / {limits.max_vehicles} vehicles")
        raise LimitsExceeded(report)

    graph = scenario.graph()
    enforce = gmax_local == "enforce"
    model = LoaderModel.build(scenario)
    inc = _increments(scenario, model)
    floor = _min_transitions(graph)
    H = graph.horizon
    n = len(model.vids)
    best = [math.inf, None]
    memo: dict = {}
    expanded = [0]

    def advance(sim: DnlState, arc) -> bool:
        if sim.live == 0:
            sim.t = arc.h
            return True
        for t in range(arc.tau, arc.h):
            sim.step(inc(arc.p, arc.q, arc.window(t)))
        return True

    def bound(sim: DnlState) -> float:
        lb = 0
        for v in range(n):
            if sim.arrival[v] is not None:
                lb += sim.arrival[v] - model.t0[v] - model.c[v]
                continue
            rest = sum(model.fftt[k] for k in model.route[v][sim.pos[v] + 1:])
            reach = max(sim.ready[v], sim.t) + rest
            if reach > H:
                return math.inf
            lb += reach - model.t0[v] - model.c[v]
        return lb

    def key(e, tau, state, sim: DnlState):
        live = tuple(
            (sim.pos[v], max(sim.ready[v], tau)) if sim.arrival[v] is None else (-2, 0) for v in range(n)
        )
        return (e, tau, state, live, tuple(sim.credit))

    def arrived_cost(sim: DnlState) -> int:
        return sum(sim.arrival[v] - model.t0[v] - model.c[v] for v in range(n) if sim.arrival[v] is not None)

    def dfs(e, tau, state, sim: DnlState, trans: int, arcs: tuple):
        expanded[0] += 1
        lb = trans + floor[e, tau] + bound(sim)
        if lb >= best[0]:
            return
        k = key(e, tau, state, sim)
        acc = trans + arrived_cost(sim)
        if memo.get(k, math.inf) <= acc:
            return
        memo[k] = acc
        term = graph.terminal(e, tau, state)
        if term is not None:
            s2 = sim.clone()
            for a in term.arcs:
                advance(s2, a)
            s2.finish()
            if s2.live == 0:
                t2 = trans + sum(1 for a in term.arcs if not a.terminal)
                total = t2 + arrived_cost(s2)
                if total < best[0]:
                    best[0] = total
                    best[1] = arcs + term.arcs
        for mv in graph.moves(e, tau, state if enforce else None):
            s2 = sim.clone()
            for a in mv.arcs:
                advance(s2, a)
            dfs(mv.target, mv.h, mv.state, s2, trans + len(mv.arcs), arcs + mv.arcs)

    start_state = graph.initial_state if enforce else None
    for e in graph.start:
        dfs(e, 0, start_state, DnlState(model), 0, ())
    if best[1] is None:
        return OracleResult(None, math.inf, None, None, expanded[0])
    plan = SignalPlan(best[1], H)
    _, moe = standard_dnl(scenario, plan, model)
    assert moe.objective == best[0]
    plan.cost = float(best[0])
    return OracleResult(plan, float(best[0]), moe.total_delay, moe.transitions, expanded[0])


def enumerate_plans(graph: PsiGraph, gmax_local: str = "ignore", limit: int = 1_000_000):
    """Every source-to-sink path of ``graph`` (tiny graphs only)."""
    enforce = gmax_local == "enforce"
    out = []

    def walk(e, tau, state, arcs):
        if len(out) > limit:
            raise LimitsExceeded({"plans": len(out)})
        term = graph.terminal(e, tau, state)
        if term is not None:
            out.append(SignalPlan(arcs + term.arcs, graph.horizon))
        for mv in graph.moves(e, tau, state):
            walk(mv.target, mv.h, mv.state, arcs + mv.arcs)

    for e in graph.start:
        walk(e, 0, graph.initial_state if enforce else None, ())
    return out


# -- MILP export ------------------------------------------------------------

FAMILIES = ("cap3p", "cap4", "storage5", "fifo6", "vconserve7", "pconserve8")
REFERENCE_COUNTS = {"rows": 9284, "columns": 176070, "nonzeros": 656336}


@dataclass
class Row:
    name: str
    family: str
    coeffs: dict  # variable index -> coefficient
    sense: str  # "<=", ">=", "="
    rhs: float


@dataclass
class MilpInstance:
    names: list = field(default_factory=list)
    index: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    x_keys: dict = field(default_factory=dict)  # (vid, leg, t) or (vid, "wait", i, t) -> var index
    y_keys: dict = field(default_factory=dict)  # arc key -> var index

    def var(self, name: str) -> int:
        k = self.index.get(name)
        if k is None:
            k = len(self.names)
            self.names.append(name)
            self.index[name] = k
        return k

    def counts(self) -> dict:
        fam = {f: 0 for f in FAMILIES}
        nnz = {f: 0 for f in FAMILIES}
        for r in self.rows:
            fam[r.family] += 1
            nnz[r.family] += len(r.coeffs)
        return {
            "rows": len(self.rows),
            "columns": len(self.names),
            "x_columns": len(self.x_keys),
            "y_columns": len(self.y_keys),
            "nonzeros": sum(nnz.values()),
            "rows_by_family": fam,
            "nonzeros_by_family": nnz,
        }

    def to_lp(self) -> str:
        lines = ["\\ signal control MILP", "Minimize"]
        lines += _wrap(" obj:", [(c, self.names[k]) for k, c in sorted(self.objective.items())]) or [" obj: 0"]
        lines.append("Subject To")
        for r in self.rows:
            terms = [(c, self.names[k]) for k, c in sorted(r.coeffs.items())]
            body = _wrap(f" {r.name}:", terms) or [f" {r.name}: 0 {self.names[0]}" if self.names else f" {r.name}: 0"]
            body[-1] += f" {r.sense} {_num(r.rhs)}"
            lines += body
        lines.append("Binary")
        for k in range(0, len(self.names), 8):
            lines.append(" " + " ".join(self.names[k:k + 8]))
        lines.append("End")
        return "\n".join(lines) + "\n"


def _num(x) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _wrap(head: str, terms: list) -> list:
    if not terms:
        return []
    out = []
    cur = head
    for k, (c, name) in enumerate(terms):
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        tok = f"{sign} {name}" if mag == 1 else f"{sign} {_num(mag)} {name}"
        if k == 0 and sign == "+":
            tok = tok[2:]
        if len(cur) + len(tok) > 200:
            out.append(cur)
            cur = "   "
        cur += " " + tok
    out.append(cur)
    return out


_SAFE = re.compile(r"[^A-Za-z0-9]")


def _tok(node) -> str:
    return _SAFE.sub("_", str(node))


def _ptok(index) -> str:
    return ".".join(str(n) for n in index)


def project_counts(scenario) -> dict:
    """Cheap upper estimates of the export size, before building anything."""
    net, aux = scenario.net, scenario.aux
    H = scenario.horizon
    xs = 0
    for v in scenario.vehicles:
        route = aux.route[v.vid]
        rest = sum(net.links[k].fftt for k in route)
        for i, k in enumerate(route):
            e = aux.earliest[v.vid][i]
            span = H - rest - e + 1
            xs += 2 * max(span, 0)
            rest -= net.links[k].fftt
    ys = 0
    for p in scenario.phases:
        width = min(p.gmax, H) - p.gmin + 1
        ys += max(width, 1) * H * max(len(scenario.phases) - 1, 1)
    return {"x_columns": xs, "y_columns": ys, "columns": xs + ys, "nonzeros": 6 * xs + 4 * ys}


def export_milp(scenario, max_columns: int = 2_000_000, max_nonzeros: int = 20_000_000) -> MilpInstance:
    """Build the integer program over each vehicle's own path links."""
    proj = project_counts(scenario)
    if proj["columns"] > max_columns or proj["nonzeros"] > max_nonzeros:
        raise LimitsExceeded({**proj, "max_columns": max_columns, "max_nonzeros": max_nonzeros})
    net, aux, mp, fac = scenario.net, scenario.aux, scenario.mapping, scenario.factors
    H = scenario.horizon
    inst = MilpInstance()
    enter: dict = {}  # (link, t) -> [var]
    leave: dict = {}  # (link, t) -> [var], exits keyed by exit second
    entry_vars: dict = {}  # (vid, link) -> [(t, var)]

    for v in scenario.vehicles:
        route = aux.route[v.vid]
        nodes = v.nodes
        ff = [net.links[k].fftt for k in route]
        latest = []
        rest = sum(ff)
        for f in ff:
            latest.append(H - rest)
            rest -= f
        balance: dict = {}  # (i, t) -> {var: coef}
        for i, k in enumerate(route):
            e = aux.earliest[v.vid][i]
            for t in range(e, latest[i] + 1):
                name = f"x_v{v.vid}_{_tok(nodes[i])}_{t}_{_tok(nodes[i + 1])}_{t + ff[i]}"
                x = inst.var(name)
                inst.x_keys[(v.vid, i, t)] = x
                enter.setdefault((k, t), []).append(x)
                entry_vars.setdefault((v.vid, k), []).append((t, x))
                if i + 1 == len(route):
                    leave.setdefault((k, t + ff[i]), []).append(x)
                    inst.objective[x] = (t + ff[i]) - v.t0 - aux.freeflow[v.vid]
                else:
                    balance.setdefault((i + 1, t + ff[i]), {})[x] = -1
                balance.setdefault((i, t), {})[x] = 1
            # waiting arcs: at the origin, and at the head of the previous link
            for t in range(e, latest[i]):
                name = f"x_v{v.vid}_{_tok(nodes[i])}_{t}_{_tok(nodes[i])}_{t + 1}"
                w = inst.var(name)
                inst.x_keys[(v.vid, "wait", i, t)] = w
                balance.setdefault((i, t), {})[w] = 1
                balance.setdefault((i, t + 1), {})[w] = -1
        for i, k in enumerate(route[1:], start=1):
            for t, x in entry_vars.get((v.vid, k), []):
                leave.setdefault((route[i - 1], t), []).append(x)
        for (i, t), coeffs in sorted(balance.items()):
            rhs = 1 if (i == 0 and t == v.t0) else 0
            inst.rows.append(Row(f"vconserve7_v{v.vid}_{_tok(nodes[i])}_{t}", "vconserve7", coeffs, "=", rhs))
        if route:
            sink = {x: 1 for t, x in entry_vars.get((v.vid, route[-1]), [])}
            inst.rows.append(Row(f"vconserve7_v{v.vid}_sink", "vconserve7", sink, "=", 1))

    # phase-time path variables
    graph = scenario.graph()
    order, edges = graph.materialize()
    covering: dict = {}  # (col, t) -> {y: coef}
    pbal: dict = {}
    sr = [net.link(k).sat_rate for k in mp.links]
    for _, _, arcs in edges:
        for a in arcs:
            akey = a.key()
            if akey in inst.y_keys:
                continue
            name = f"y_{_ptok(a.p)}_{a.tau}_{_ptok(a.q) if a.q is not None else 'z'}_{a.h}"
            y = inst.var(name)
            inst.y_keys[akey] = y
            if not a.terminal:
                inst.objective[y] = 1
            pbal.setdefault((a.p, a.tau), {})[y] = 1
            if a.q is not None:
                pbal.setdefault((a.q, a.h), {})[y] = -1
            for col, link in enumerate(mp.links):
                m_p = mp.m(link, a.p)
                m_q = mp.m(link, a.q) if a.q is not None else None
                for t in range(a.tau, a.h):
                    f = window_factor(m_p, m_q, a.window(t), fac) * sr[col]
                    if f:
                        covering.setdefault((col, t), {})[y] = math.ceil(f)
    init = graph.entities[graph.start[0]].first
    for (p, tau), coeffs in sorted(pbal.items()):
        rhs = 1 if (p == init and tau == 0) else 0
        inst.rows.append(Row(f"pconserve8_{_ptok(p)}_{tau}", "pconserve8", coeffs, "=", rhs))

    ctrl = {net.index[key]: c for c, key in enumerate(mp.links)}
    for (k, t), xs in sorted(enter.items()):
        key = net.links[k].key
        coeffs = {x: 1 for x in xs}
        if k in ctrl:
            for y, c in covering.get((ctrl[k], t), {}).items():
                coeffs[y] = -c
            inst.rows.append(Row(f"cap3p_{_tok(key[0])}_{_tok(key[1])}_{t}", "cap3p", coeffs, "<=", 0))
        else:
            cap = math.ceil(net.links[k].sat_rate)
            if len(xs) > cap:
                inst.rows.append(Row(f"cap4_{_tok(key[0])}_{_tok(key[1])}_{t}", "cap4", coeffs, "<=", cap))

    for k, link in enumerate(net.links):
        if link.storage is None:
            continue
        times = sorted(t for (kk, t) in enter if kk == k)
        users = len(aux.fifo_order.get(k, []))
        if users <= link.storage:
            continue
        for t in times:
            coeffs: dict = {}
            for (kk, te), xs in enter.items():
                if kk == k and te <= t:
                    for x in xs:
                        coeffs[x] = coeffs.get(x, 0) + 1
            for (kk, tl), xs in leave.items():
                if kk == k and tl <= t:
                    for x in xs:
                        coeffs[x] = coeffs.get(x, 0) - 1
            coeffs = {x: c for x, c in coeffs.items() if c}
            inst.rows.append(Row(f"storage5_{_tok(link.source)}_{_tok(link.target)}_{t}", "storage5", coeffs, "<=", link.storage))

    for k, vids in sorted(aux.fifo_order.items()):
        key = net.links[k].key
        for a, b in zip(vids[:-1], vids[1:]):
            coeffs: dict = {}
            for t, x in entry_vars.get((a, k), []):
                coeffs[x] = coeffs.get(x, 0) + t
            for t, x in entry_vars.get((b, k), []):
                coeffs[x] = coeffs.get(x, 0) - t
            coeffs = {x: c for x, c in coeffs.items() if c}
            inst.rows.append(Row(f"fifo6_{_tok(key[0])}_{_tok(key[1])}_v{a}_v{b}", "fifo6", coeffs, "<=", 0))
    return inst


def encode_assignment(inst: MilpInstance, scenario, traj: TrajectorySet, plan: SignalPlan) -> dict:
    """0/1 values of every registered variable for a (trajectories, plan) pair."""
    values = {name: 0 for name in inst.names}
    aux = scenario.aux
    net = scenario.net
    for v in scenario.vehicles:
        tr = traj.vehicles[v.vid]
        route = aux.route[v.vid]
        for i, (k, entry, _) in enumerate(tr.legs):
            values[inst.names[inst.x_keys[(v.vid, i, entry)]]] = 1
            ready = v.t0 if i == 0 else tr.legs[i - 1][1] + net.links[route[i - 1]].fftt
            for t in range(ready, entry):
                values[inst.names[inst.x_keys[(v.vid, "wait", i, t)]]] = 1
    for a in plan.arcs:
        y = inst.y_keys.get(a.key())
        if y is None:
            raise ValueError(f"arc {a.key()} is not in the exported phase-time network")
        values[inst.names[y]] = 1
    return values


@dataclass(frozen=True)
class RowViolation:
    row: str
    family: str
    lhs: float
    sense: str
    rhs: float


def check_solution(inst: MilpInstance, assignment: dict) -> tuple[list, float]:
    """Row residuals of ``assignment``; returns (violations, objective)."""
    vals = np.zeros(len(inst.names))
    bad = []
    for k, name in enumerate(inst.names):
        x = assignment.get(name)
        if x is None or x not in (0, 1):
            bad.append(RowViolation(f"binary:{name}", "binary", float("nan") if x is None else x, "in", 1))
            continue
        vals[k] = x
    for r in inst.rows:
        lhs = sum(c * vals[k] for k, c in r.coeffs.items())
        ok = lhs <= r.rhs if r.sense == "<=" else lhs >= r.rhs if r.sense == ">=" else lhs == r.rhs
        if not ok:
            bad.append(RowViolation(r.name, r.family, lhs, r.sense, r.rhs))
    obj = float(sum(c * vals[k] for k, c in inst.objective.items()))
    return bad, obj
