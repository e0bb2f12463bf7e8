"""Command-line interface.

Exit codes: 0 success, 2 validation failure, 3 infeasible.
Every run writes ``resolved_config.json`` into ``--out``; passing that file
back with ``--config`` repeats the run.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import statistics
import sys
import time
from pathlib import Path

from .exact import Limits, LimitsExceeded, brute_force_optimum, check_solution, encode_assignment, export_milp, REFERENCE_COUNTS
from .fixtures import FIXTURES, scaffold_fixture
from .lagrangian import SolveConfig, histories_equal, solve
from .loader import HorizonExceeded, LoaderModel, standard_dnl, validate_feasible
from .network import ScenarioError
from .ptgraph import PlanInfeasible, SignalPlan
from .report import (read_trajectories, write_gamma, write_json, write_moe, write_plan, write_time_space,
                     write_trajectories)
from .scenario import load_scenario_dir

log = logging.getLogger("phasetime")

OK, INVALID, INFEASIBLE = 0, 2, 3


def _scenario_args(p):
    p.add_argument("--scenario", help="directory with network.json, vehicles.json, phases.json")
    p.add_argument("--policy", choices=["full", "semi", "groups"], default=None,
                   help="override the policy declared in phases.json")
    p.add_argument("--rho-y", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--out", default="out")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="phasetime", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="resolved_config.json from an earlier run")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    subs = {}

    p = subs["scaffold"] = sub.add_parser("scaffold", help="write a bundled fixture scenario")
    p.add_argument("name", nargs="?", choices=FIXTURES)
    p.add_argument("--out", default=None)

    p = subs["solve"] = sub.add_parser("solve", help="run the Lagrangian solver")
    _scenario_args(p)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--gap-tol", type=float, default=0.01)
    p.add_argument("--rule", choices=["paper", "projected"], default="projected")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--gmax-local", choices=["enforce", "ignore"], default="enforce")
    p.add_argument("--labels", choices=["pareto", "single"], default="pareto")
    p.add_argument("--gap-basis", choices=["certified", "approximate"], default="certified")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--diagrams", action="store_true", help="also write time-space SVG/CSV")

    p = subs["oracle"] = sub.add_parser("oracle", help="exhaustive optimum for tiny instances")
    _scenario_args(p)
    p.add_argument("--gmax-local", choices=["enforce", "ignore"], default="enforce")
    p.add_argument("--max-phases", type=int, default=4)
    p.add_argument("--max-horizon", type=int, default=60)
    p.add_argument("--max-vehicles", type=int, default=8)

    p = subs["export-milp"] = sub.add_parser("export-milp", help="write the integer program as LP text")
    _scenario_args(p)
    p.add_argument("--max-columns", type=int, default=2_000_000)
    p.add_argument("--max-nonzeros", type=int, default=20_000_000)

    p = subs["validate"] = sub.add_parser("validate", help="check a scenario, or a plan and its trajectories")
    _scenario_args(p)
    p.add_argument("--plan", help="plan.json")
    p.add_argument("--trajectories", help="trajectories.csv; loaded from the plan when omitted")

    p = subs["moe"] = sub.add_parser("moe", help="load a plan and report measures of effectiveness")
    _scenario_args(p)
    p.add_argument("--plan", help="plan.json")
    p.add_argument("--gamma", action="store_true", help="also dump gamma.csv")

    p = subs["bench"] = sub.add_parser("bench", help="per-iteration time for several worker counts")
    _scenario_args(p)
    p.add_argument("--workers", default="1,2,4,8")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--repeat", type=int, default=1)
    return parser, subs


def _load(args):
    if not args.scenario:
        raise ScenarioError(["--scenario is required"])
    return load_scenario_dir(args.scenario, policy=args.policy, rho_y=args.rho_y, delta=args.delta)


def _resolved(args) -> dict:
    doc = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    return doc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "resolved_config.json", _resolved(args))
    return out


def cmd_scaffold(args) -> int:
    if not args.name:
        raise ScenarioError([f"fixture name required: {', '.join(FIXTURES)}"])
    args.out = args.out or args.name
    path = scaffold_fixture(args.name, args.out)
    _out(args)
    print(path)
    return OK


def cmd_solve(args) -> int:
    sc = _load(args)
    out = _out(args)
    cfg = SolveConfig(max_iter=args.iters, gap_tol=args.gap_tol, rule=args.rule, workers=args.workers,
                      gmax_local=args.gmax_local, labels=args.labels, gap_basis=args.gap_basis, seed=args.seed)

    def progress(rec):
        log.info("n=%d LB=%.3f UB=%s best=%s", rec.n, rec.LB, rec.UB, rec.best_UB)

    res = solve(sc, cfg, progress)
    res.write_history(out / "history.csv")
    if res.best_plan is None:
        print("no feasible signal plan found", file=sys.stderr)
        return INFEASIBLE
    write_plan(out / "plan.json", res.best_plan)
    write_trajectories(out / "trajectories.csv", res.best_trajectories, sc.net)
    write_moe(out / "moe.json", res.best_moe)
    if args.diagrams:
        write_time_space(out / "diagrams", res.best_trajectories, res.best_plan, sc)
    print(f"iterations={len(res.history)} best_UB={res.best_UB:g} total_delay={res.best_moe.total_delay} "
          f"transitions={res.best_moe.transitions} certified_LB={res.certified_lb:g} converged={res.converged}")
    return OK


def cmd_oracle(args) -> int:
    sc = _load(args)
    out = _out(args)
    lim = Limits(args.max_phases, args.max_horizon, args.max_vehicles)
    res = brute_force_optimum(sc, args.gmax_local, lim)
    write_json(out / "oracle.json", res.to_doc())
    if res.plan is None:
        print("no feasible plan", file=sys.stderr)
        return INFEASIBLE
    write_plan(out / "plan.json", res.plan)
    print(f"objective={res.objective:g} total_delay={res.total_delay} transitions={res.transitions} nodes={res.nodes}")
    return OK


def cmd_export(args) -> int:
    sc = _load(args)
    out = _out(args)
    inst = export_milp(sc, args.max_columns, args.max_nonzeros)
    (out / "model.lp").write_text(inst.to_lp())
    counts = inst.counts()
    counts["reference"] = REFERENCE_COUNTS
    counts["horizon"] = sc.horizon
    write_json(out / "counts.json", counts)
    print(f"rows={counts['rows']} columns={counts['columns']} nonzeros={counts['nonzeros']}")
    return OK


def cmd_validate(args) -> int:
    sc = _load(args)
    out = _out(args)
    if not args.plan:
        print(f"scenario ok: {len(sc.net.links)} links, {len(sc.vehicles)} vehicles, {len(sc.phases)} phases")
        return OK
    plan = SignalPlan.from_doc(json.loads(Path(args.plan).read_text()))
    if args.trajectories:
        traj = read_trajectories(args.trajectories, sc)
    else:
        try:
            traj, _ = standard_dnl(sc, plan)
        except HorizonExceeded as exc:
            print(str(exc), file=sys.stderr)
            return INFEASIBLE
    bad = validate_feasible(traj, plan, sc)
    doc = {"violations": [v.__dict__ for v in bad]}
    try:
        inst = export_milp(sc)
        rows, obj = check_solution(inst, encode_assignment(inst, sc, traj, plan))
        doc["milp_violations"] = [r.__dict__ for r in rows]
        doc["milp_objective"] = obj
    except (LimitsExceeded, KeyError, ValueError) as exc:
        doc["milp_check"] = f"skipped: {exc}"
    write_json(out / "violations.json", doc)
    n = len(bad) + len(doc.get("milp_violations", []))
    print(f"violations={n}")
    return OK if n == 0 else INVALID


def cmd_moe(args) -> int:
    sc = _load(args)
    out = _out(args)
    if not args.plan:
        raise ScenarioError(["--plan is required"])
    plan = SignalPlan.from_doc(json.loads(Path(args.plan).read_text()))
    traj, moe = standard_dnl(sc, plan)
    write_moe(out / "moe.json", moe)
    write_trajectories(out / "trajectories.csv", traj, sc.net)
    write_time_space(out / "diagrams", traj, plan, sc)
    if args.gamma:
        write_gamma(out / "gamma.csv", plan, sc)
    print(f"total_delay={moe.total_delay} total_travel_time={moe.total_travel_time} transitions={moe.transitions}")
    return OK


def bench_workers(scenario, workers: list[int], iters: int, repeat: int = 1) -> list[dict]:
    """Mean wall time per iteration for each worker count (fixed iteration budget)."""
    rows = []
    ref = None
    for k in workers:
        cfg = SolveConfig(max_iter=iters, gap_tol=0.0, workers=k)
        times = []
        for _ in range(repeat):
            t = time.perf_counter()
            res = solve(scenario, cfg)
            times.append((time.perf_counter() - t) / len(res.history))
            if ref is None:
                ref = res.history
            same = histories_equal(ref, res.history)
        rows.append({"workers": k, "iterations": len(res.history), "ms_per_iteration": 1000 * statistics.mean(times),
                     "identical_history": same})
    return rows


def cmd_bench(args) -> int:
    sc = _load(args)
    out = _out(args)
    workers = [int(x) for x in str(args.workers).split(",") if x]
    rows = bench_workers(sc, workers, args.iters, args.repeat)
    with open(out / "bench.csv", "w") as fh:
        fh.write("workers,iterations,ms_per_iteration,identical_history\n")
        for r in rows:
            fh.write(f"{r['workers']},{r['iterations']},{r['ms_per_iteration']:.3f},{r['identical_history']}\n")
    for r in rows:
        print(f"workers={r['workers']} ms/iter={r['ms_per_iteration']:.1f} identical={r['identical_history']}")
    return OK


COMMANDS = {
    "scaffold": cmd_scaffold,
    "solve": cmd_solve,
    "oracle": cmd_oracle,
    "export-milp": cmd_export,
    "validate": cmd_validate,
    "moe": cmd_moe,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if known.config:
        doc = json.loads(Path(known.config).read_text())
        command = doc.pop("command")
        if not rest or rest[0] not in subs:
            rest = [command] + rest
        subs[rest[0]].set_defaults(**doc)
        argv = rest
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.command:
        parser.print_help()
        return INVALID
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return INVALID
    except (LimitsExceeded, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except (PlanInfeasible, HorizonExceeded) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
