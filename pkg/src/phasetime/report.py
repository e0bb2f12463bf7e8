"""Output files: plan, trajectories, MOE, gamma dump and time-space diagrams."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .loader import MoeReport, TrajectorySet
from .ptgraph import SignalPlan, plan_to_gamma


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, default=str) + "\n")


def write_plan(path, plan: SignalPlan) -> None:
    write_json(path, plan.to_doc())


def write_trajectories(path, traj: TrajectorySet, net) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vid", "link_from", "link_to", "entry_t", "exit_t"])
        w.writerows(traj.rows(net))


def read_trajectories(path, scenario) -> TrajectorySet:
    from .loader import VehicleTrajectory

    net = scenario.net
    legs: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (_parse_node(row["link_from"], net), _parse_node(row["link_to"], net))
            exit_ = int(row["exit_t"]) if row["exit_t"] not in ("", "None") else None
            legs.setdefault(int(row["vid"]), []).append((net.index[key], int(row["entry_t"]), exit_))
    out = {}
    for v in scenario.vehicles:
        ls = tuple(sorted(legs.get(v.vid, []), key=lambda x: x[1]))
        arrival = ls[-1][2] if ls and len(ls) == len(v.links) else None
        out[v.vid] = VehicleTrajectory(v.vid, v.t0, ls, arrival)
    return TrajectorySet(out, net.horizon)


def _parse_node(text: str, net):
    for n in net.nodes:
        if str(n) == text:
            return n
    raise KeyError(f"unknown node {text!r}")


def write_moe(path, moe: MoeReport) -> None:
    write_json(path, moe.to_doc())


def write_gamma(path, plan: SignalPlan, scenario) -> None:
    gamma = plan_to_gamma(plan, scenario.mapping, scenario.factors)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_from", "link_to", "t", "factor", "status"])
        for col, (a, b) in enumerate(gamma.links):
            for t, f in enumerate(gamma.values[col]):
                w.writerow([a, b, t, str(f), gamma.status[col][t]])


COLORS = {"green": "#2e9d3a", "yellow": "#f2c12e", "allred": "#c62828", "red": "#c62828"}


def corridors(scenario) -> dict:
    """Group vehicle paths by identical node sequence; each becomes one diagram."""
    out: dict = {}
    for v in scenario.vehicles:
        out.setdefault(tuple(v.nodes), []).append(v.vid)
    return out


def write_time_space(out_dir, traj: TrajectorySet, plan: SignalPlan, scenario) -> list[Path]:
    """One SVG plus raw CSV per corridor: distance in free-flow seconds against time."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = scenario.net
    gamma = plan_to_gamma(plan, scenario.mapping, scenario.factors)
    col = {key: c for c, key in enumerate(gamma.links)}
    written = []
    for k, (nodes, vids) in enumerate(sorted(corridors(scenario).items(), key=lambda kv: kv[1][0])):
        keys = list(zip(nodes[:-1], nodes[1:]))
        offset = {}
        pos = 0
        for key in keys:
            offset[key] = pos
            pos += net.link(key).fftt
        stem = f"corridor{k + 1}_{nodes[0]}-{nodes[-1]}"
        rows = []
        fig, ax = plt.subplots(figsize=(8, 4))
        for key in keys:
            if key not in col:
                continue
            y = offset[key]
            for t, status in enumerate(gamma.status[col[key]]):
                ax.plot([t, t + 1], [y, y], color=COLORS[status], linewidth=4, solid_capstyle="butt")
                rows.append(("band", f"{key[0]}-{key[1]}", t, y, status))
        for vid in vids:
            xs, ys = [], []
            for li, entry, exit_ in traj.vehicles[vid].legs:
                key = net.links[li].key
                y0 = offset[key]
                ff = net.links[li].fftt
                xs += [entry, entry + ff, exit_]
                ys += [y0, y0 + ff, y0 + ff]
            ax.plot(xs, ys, color="#1f3b73", linewidth=1)
            rows += [("vehicle", vid, x, y, "") for x, y in zip(xs, ys)]
        ax.set_xlabel("time (s)")
        ax.set_ylabel("distance (free-flow s)")
        ax.set_title(f"{nodes[0]} -> {nodes[-1]}")
        ax.set_xlim(0, net.horizon)
        svg = out_dir / f"{stem}.svg"
        fig.savefig(svg, format="svg")
        plt.close(fig)
        with open(out_dir / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "id", "t", "y", "status"])
            w.writerows(rows)
        written.append(svg)
    return written
