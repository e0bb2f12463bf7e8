"""Lagrangian decomposition of the signal problem with subgradient multiplier updates.

Capacity rows of the controlled links are dualized. Each iteration loads
vehicles with those capacities removed (vehicle side), finds the cheapest
signal plan under the resulting prices (signal side), then loads the plan
for real to get a feasible upper bound.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .loader import HorizonExceeded, LoaderModel, TrajectorySet, customized_dnl, standard_dnl, validate_feasible
from .ptgraph import PlanInfeasible, SignalPlan, plan_to_gamma, shortest_plan

log = logging.getLogger(__name__)

PAPER = "paper"
PROJECTED = "projected"


@dataclass
class SolveConfig:
    max_iter: int = 200
    gap_tol: float = 0.01
    rule: str = PROJECTED
    workers: int = 1
    gmax_local: str = "enforce"
    labels: str = "pareto"
    gap_basis: str = "certified"  # or "approximate": stop on the best reported LB
    seed: int = 0

    def __post_init__(self):
        if self.rule not in (PAPER, PROJECTED):
            raise ValueError(f"unknown update rule {self.rule!r}")
        if self.gap_basis not in ("certified", "approximate"):
            raise ValueError(f"unknown gap basis {self.gap_basis!r}")
        if self.workers < 1 or self.max_iter < 1:
            raise ValueError("workers and max_iter must be positive")


@dataclass
class IterationRecord:
    n: int
    L11: float
    L12: float
    LB: float
    UB: float
    best_UB: float
    gap: float
    theta: float
    ms_per_task: dict = field(default_factory=dict)
    plan: SignalPlan | None = None

    def row(self) -> dict:
        ms = ";".join(f"{k}={v:.3f}" for k, v in self.ms_per_task.items())
        return {
            "n": self.n,
            "L11": repr(self.L11),
            "L12": repr(self.L12),
            "LB": repr(self.LB),
            "UB": repr(self.UB),
            "best_UB": repr(self.best_UB),
            "gap": repr(self.gap),
            "ms_per_task": ms,
        }


HISTORY_COLUMNS = ["n", "L11", "L12", "LB", "UB", "best_UB", "gap", "ms_per_task"]


@dataclass
class SolveResult:
    best_plan: SignalPlan | None
    best_trajectories: TrajectorySet | None
    best_moe: object
    history: list
    multipliers: np.ndarray
    certified_lb: float
    converged: bool

    @property
    def best_UB(self) -> float:
        return self.history[-1].best_UB if self.history else math.inf

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
            w.writeheader()
            for rec in self.history:
                w.writerow(rec.row())


def subgradient(scenario, entries: np.ndarray, plan: SignalPlan) -> np.ndarray:
    """Entries into each controlled link minus the capacity the plan grants."""
    gamma = plan_to_gamma(plan, scenario.mapping, scenario.factors)
    sr = np.array([float(scenario.net.link(k).sat_rate) for k in scenario.mapping.links])
    return entries.astype(float) - gamma.array() * sr[:, None]


def step_size(n: int) -> float:
    return 1.0 / (n + 1)


def update_multipliers(lam: np.ndarray, grad: np.ndarray, n: int, rule: str = PROJECTED) -> np.ndarray:
    if lam.shape != grad.shape:
        raise ValueError(f"shape mismatch {lam.shape} vs {grad.shape}")
    theta = step_size(n)
    if rule == PAPER:
        return lam + np.maximum(0.0, theta * grad)
    if rule == PROJECTED:
        return np.maximum(0.0, lam + theta * grad)
    raise ValueError(f"unknown update rule {rule!r}")


# worker-side state: one scenario per process
_W: dict = {}


def _init_worker(scenario) -> None:
    _W["scenario"] = scenario
    _W["model"] = LoaderModel.build(scenario)


def evaluate_plan(plan_doc: dict, scenario=None, model=None) -> dict:
    """Load a plan with the standard loader and check it; the UB task."""
    scenario = scenario or _W["scenario"]
    model = model or _W["model"]
    t = time.perf_counter()
    plan = SignalPlan.from_doc(plan_doc)
    try:
        traj, moe = standard_dnl(scenario, plan, model)
    except HorizonExceeded as exc:
        return {"UB": math.inf, "stuck": exc.stuck, "ms": 1000 * (time.perf_counter() - t)}
    bad = validate_feasible(traj, plan, scenario, model)
    if bad:
        log.error("standard loading violated %d constraint(s); first: %s", len(bad), bad[0])
        return {"UB": math.inf, "violations": len(bad), "ms": 1000 * (time.perf_counter() - t)}
    return {"UB": float(moe.objective), "traj": traj, "moe": moe, "ms": 1000 * (time.perf_counter() - t)}


def solve(scenario, config: SolveConfig = SolveConfig(), progress=None) -> SolveResult:
    """Run the subgradient loop until the gap closes or the iteration cap."""
    model = LoaderModel.build(scenario)
    graph = scenario.graph()
    lam = scenario.zero_lambda()
    custom = customized_dnl(scenario, lam, model)
    pool = ProcessPoolExecutor(config.workers - 1, initializer=_init_worker, initargs=(scenario,)) if config.workers > 1 else None

    def ub_task(plan: SignalPlan):
        if pool is None:
            return evaluate_plan(plan.to_doc(), scenario, model)
        return pool.submit(evaluate_plan, plan.to_doc())

    def lb_side(n: int, lam: np.ndarray):
        t0 = time.perf_counter()
        res = customized_dnl(scenario, lam, model, custom.trajectories)
        t1 = time.perf_counter()
        try:
            plan = shortest_plan(graph, scenario.costs(lam), config.gmax_local, config.labels)
        except PlanInfeasible:
            plan = None
        t2 = time.perf_counter()
        return res, plan, {"custom": 1000 * (t1 - t0), "plan": 1000 * (t2 - t1)}

    history: list[IterationRecord] = []
    best = math.inf
    best_plan = best_traj = best_moe = None
    max_lb = -math.inf
    certified = -math.inf
    converged = False
    try:
        res, plan, ms = lb_side(0, lam)
        if plan is None:
            raise PlanInfeasible("no signal plan reaches the horizon")
        n = 0
        while True:
            pending = ub_task(plan)
            t = time.perf_counter()
            grad = subgradient(scenario, res.entries, plan)
            nxt_lam = update_multipliers(lam, grad, n, config.rule)
            ms["update"] = 1000 * (time.perf_counter() - t)
            last = n + 1 >= config.max_iter
            ahead = None
            if pool is not None and not last:
                ahead = lb_side(n + 1, nxt_lam)  # overlaps the UB loading
            ub = pending.result() if pool is not None else pending
            ms["ub"] = ub["ms"]
            L11, L12 = res.L11, plan.cost
            lb = L11 + L12
            if n == 0:
                certified = lb
            max_lb = max(max_lb, lb)
            if ub["UB"] < best:
                best, best_plan, best_traj, best_moe = ub["UB"], plan, ub["traj"], ub["moe"]
            gap = best - max_lb
            rec = IterationRecord(n, L11, L12, lb, ub["UB"], best, gap, step_size(n), ms, plan)
            history.append(rec)
            if progress:
                progress(rec)
            floor = certified if config.gap_basis == "certified" else max_lb
            if math.isfinite(best) and best - floor <= config.gap_tol * max(abs(best), 1e-9):
                converged = True
                break
            if last:
                break
            lam = nxt_lam
            n += 1
            res, plan, ms = ahead if ahead is not None else lb_side(n, lam)
            if plan is None:
                log.warning("iteration %d: signal subproblem infeasible", n)
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return SolveResult(best_plan, best_traj, best_moe, history, lam, certified, converged)


def histories_equal(a: list, b: list) -> bool:
    """Compare two histories on every column except timings."""
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        rx, ry = x.row(), y.row()
        rx.pop("ms_per_task")
        ry.pop("ms_per_task")
        if rx != ry or x.plan.to_doc() != y.plan.to_doc():
            return False
    return True
