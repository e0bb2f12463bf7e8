import csv
import json

import pytest

from phasetime.cli import main
from phasetime.fixtures import write_docs

from conftest import main_vehicle, side_vehicle


def small_docs(horizon=30, gmin=2, gmax=10, yellow=1, allred=1, vehicles=None):
    net = {
        "nodes": ["a", "b", "c", "d", "x", "y", "z"],
        "horizon": horizon,
        "links": [
            {"from": "a", "to": "b", "fftt": 3, "sat_rate_vph": 3600},
            {"from": "b", "to": "c", "fftt": 2, "sat_rate_vph": 3600, "control": {"intersection": "A"}},
            {"from": "c", "to": "d", "fftt": 3, "sat_rate_vph": 3600},
            {"from": "x", "to": "y", "fftt": 2, "sat_rate_vph": 3600, "control": {"intersection": "A"}},
            {"from": "y", "to": "z", "fftt": 2, "sat_rate_vph": 3600},
        ],
    }
    phases = {"intersections": [{"id": "A", "phases": [
        {"id": 1, "gmin": gmin, "gmax": gmax, "yellow": yellow, "allred": allred, "links": [{"from": "b", "to": "c"}]},
        {"id": 2, "gmin": gmin, "gmax": gmax, "yellow": yellow, "allred": allred, "links": [{"from": "x", "to": "y"}]},
    ]}]}
    if vehicles is None:
        vehicles = [main_vehicle(1, 0), side_vehicle(2, 2), main_vehicle(3, 6)]
    return net, vehicles, phases


@pytest.fixture
def scen(tmp_path):
    return str(write_docs(tmp_path / "scen", *small_docs()))


def test_scaffold_writes_fixture(tmp_path, capsys):
    out = tmp_path / "s1"
    assert main(["scaffold", "exp1-s1", "--out", str(out)]) == 0
    doc = json.loads((out / "vehicles.json").read_text())
    assert len(doc["vehicles"]) == 20
    assert (out / "resolved_config.json").exists()


def test_scaffold_needs_a_name(capsys):
    assert main(["scaffold"]) == 2


def test_solve_outputs_and_replay(scen, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", "--scenario", scen, "--iters", "5", "--out", str(out)]) == 0
    for name in ("history.csv", "plan.json", "trajectories.csv", "moe.json", "resolved_config.json"):
        assert (out / name).exists(), name
    with open(out / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["n", "L11", "L12", "LB", "UB", "best_UB", "gap", "ms_per_task"]
    first = capsys.readouterr().out

    cfg = json.loads((out / "resolved_config.json").read_text())
    assert cfg["command"] == "solve" and cfg["iters"] == 5
    again = tmp_path / "again"
    cfg["out"] = str(again)
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["--config", str(tmp_path / "cfg.json")]) == 0
    assert capsys.readouterr().out == first
    assert (again / "plan.json").read_text() == (out / "plan.json").read_text()


def test_oracle_and_export(scen, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["oracle", "--scenario", scen, "--out", str(out)]) == 0
    doc = json.loads((out / "oracle.json").read_text())
    assert doc["objective"] == doc["total_delay"] + doc["transitions"]
    assert main(["export-milp", "--scenario", scen, "--out", str(out)]) == 0
    counts = json.loads((out / "counts.json").read_text())
    assert counts["reference"]["rows"] == 9284
    assert (out / "model.lp").read_text().startswith("\\")
    assert main(["export-milp", "--scenario", scen, "--out", str(out), "--max-columns", "5"]) == 2


def test_moe_and_validate(scen, tmp_path, capsys):
    out = tmp_path / "m"
    assert main(["oracle", "--scenario", scen, "--out", str(out)]) == 0
    plan = str(out / "plan.json")
    assert main(["moe", "--scenario", scen, "--plan", plan, "--gamma", "--out", str(out)]) == 0
    assert (out / "gamma.csv").exists() and (out / "diagrams").is_dir()
    assert main(["validate", "--scenario", scen, "--plan", plan, "--out", str(out)]) == 0
    doc = json.loads((out / "violations.json").read_text())
    assert doc["violations"] == [] and doc["milp_violations"] == []

    # push every main-street exit one second early
    path = out / "trajectories.csv"
    lines = path.read_text().splitlines()
    head, body = lines[0], lines[1:]
    cols = head.split(",")
    broken = []
    for line in body:
        f = dict(zip(cols, line.split(",")))
        if f["link_from"] == "a":
            f["exit_t"] = str(int(f["exit_t"]) - 1)
        broken.append(",".join(f[c] for c in cols))
    path.write_text("\n".join([head] + broken) + "\n")
    assert main(["validate", "--scenario", scen, "--plan", plan, "--trajectories", str(path), "--out", str(out)]) == 2


def test_validate_scenario_only(scen, tmp_path, capsys):
    assert main(["validate", "--scenario", scen, "--out", str(tmp_path / "v")]) == 0
    assert "scenario ok" in capsys.readouterr().out


def test_bad_scenario_exit_code(tmp_path, capsys):
    net, vehicles, phases = small_docs()
    net["links"][0]["fftt"] = -1
    d = write_docs(tmp_path / "bad", net, vehicles, phases)
    assert main(["solve", "--scenario", str(d), "--out", str(tmp_path / "o")]) == 2
    assert "links[0].fftt" in capsys.readouterr().err


def test_infeasible_exit_code(tmp_path, capsys):
    # switches span 6 s and rests at most 3 s: horizon 11 is unreachable
    d = write_docs(tmp_path / "inf", *small_docs(horizon=11, gmin=3, gmax=3, yellow=2, allred=1,
                                                 vehicles=[main_vehicle(1, 0)]))
    assert main(["solve", "--scenario", str(d), "--iters", "2", "--out", str(tmp_path / "o")]) == 3


def test_bench_reports_identical_histories(scen, tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["bench", "--scenario", scen, "--workers", "1,2", "--iters", "3", "--out", str(out)]) == 0
    text = (out / "bench.csv").read_text().splitlines()
    assert text[0] == "workers,iterations,ms_per_iteration,identical_history"
    assert all(line.endswith("True") for line in text[1:])


def test_no_command_prints_help(capsys):
    assert main([]) == 2
