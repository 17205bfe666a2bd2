import json
import os

import pytest

from pulsesync.cli import grid_cells, main, parse_grid, parse_seeds, sweep
from pulsesync.report import format_table, read_trace_csv, trace_bytes
from pulsesync.scenario import Scenario, ScenarioError, load_scenario, run

HERE = os.path.dirname(os.path.abspath(__file__))
SCN = os.path.join(HERE, "..", "scenarios")


def scenario(name):
    return os.path.join(SCN, name)


def test_st_smoke_exit_zero(capsys):
    assert main(["run", "--scenario", scenario("st_smoke.yaml")]) == 0
    out = capsys.readouterr().out
    assert "max skew" in out and "OK:" in out


def test_infeasible_theta_exit_two(capsys):
    assert main(["run", "--scenario", scenario("infeasible_theta.yaml")]) == 2
    assert "theta < (2+sqrt(32))/7 violated" in capsys.readouterr().err


def test_malformed_config_reports_location(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("system: st-pulser\nn: [4\nf: 1\n")
    assert main(["run", "--scenario", str(bad)]) == 2
    assert "line" in capsys.readouterr().err


def test_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("system: warp-drive\nn: 4\nf: 1\n")
    assert main(["run", "--scenario", str(bad)]) == 2
    assert "system" in capsys.readouterr().err


def test_failed_assertion_exit_one(capsys):
    # a horizon too short for the first joint pulse
    assert main(["run", "--scenario", scenario("st_smoke.yaml"), "--duration", "5"]) == 1
    assert "first violation" in capsys.readouterr().out


def test_assert_filter(capsys):
    assert main(["run", "--scenario", scenario("st_smoke.yaml"), "--duration", "5", "--assert", "none"]) == 0


@pytest.mark.parametrize("name", ["st_smoke.yaml", "main_pulser.yaml", "resync.yaml", "consensus.yaml",
                                  "recursion_split.yaml"])
def test_run_artifacts_and_recompute(name, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--scenario", scenario(name), "--out", str(out)]) == 0
    for f in ("trace.csv", "metrics.json", "machines.txt", "run.json"):
        assert (out / f).exists()
    assert main(["recompute", "--out", str(out)]) == 0
    assert "match" in capsys.readouterr().out
    # the CSV holds exactly the in-run trace
    res = run(load_scenario(scenario(name)))
    assert trace_bytes(read_trace_csv(out / "trace.csv")) == trace_bytes(res.trace.records)


def test_recompute_detects_tampering(tmp_path, capsys):
    out = tmp_path / "run"
    main(["run", "--scenario", scenario("st_smoke.yaml"), "--out", str(out)])
    lines = (out / "trace.csv").read_text().splitlines()
    kept = [ln for ln in lines if ",pulse," not in ln or not ln.split(",")[1] == "0"]
    (out / "trace.csv").write_text("\n".join(kept) + "\n")
    assert main(["recompute", "--out", str(out)]) == 1


def test_dump_machine(capsys):
    main(["run", "--scenario", scenario("st_smoke.yaml"), "--dump-machine"])
    assert "machine st" in capsys.readouterr().out


def test_solve_and_describe(capsys):
    assert main(["solve-timeouts", "--system", "st-pulser", "--theta", "1.1", "--tau", "10"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["T1"] == "1221/100"
    assert main(["solve-timeouts", "--system", "main-pulser", "--theta", "1.1"]) == 2
    assert main(["describe", "--theta", "1.001", "--phi", "1.03"]) == 0
    assert "L.c1.c0" in capsys.readouterr().out
    assert main(["describe", "--theta", "1.004", "--phi", "1.021"]) == 2
    assert "no phi exists" in capsys.readouterr().err


def test_parse_helpers():
    assert parse_seeds("0:3") == [0, 1, 2]
    assert parse_seeds("4,7") == [4, 7]
    assert parse_grid(["init.spread=0,5", "seed=1"]) == {"init.spread": [0, 5], "seed": [1]}
    with pytest.raises(ScenarioError):
        parse_grid(["nonsense"])
    cells = grid_cells({"system": "st-pulser", "init": {"spread": 1}}, {"init.spread": [0, 5]})
    assert [c["init"]["spread"] for c in cells] == [0, 5]


def base_st():
    return {k: v for k, v in load_scenario(scenario("st_smoke.yaml")).to_dict().items() if v is not None}


def test_sweep_three_adversaries_zero_violations():
    rows = sweep(base_st(), {"faulty.3": ["random", "silent", "equivocator"]}, range(100))
    assert [r["runs"] for r in rows] == [100, 100, 100]
    assert all(r["violations"] == 0 and r["errors"] == 0 for r in rows)


def test_sweep_init_spread_grid_all_stabilise():
    rows = sweep(base_st(), {"init.spread": [0, 5, 10]}, range(20))
    assert len(rows) == 3
    assert all(r["violations"] == 0 and r["max_stab"] != "-" for r in rows)


def test_empty_grid_gives_empty_table(capsys):
    assert sweep(base_st(), {"init.spread": []}, range(3)) == []
    assert format_table([], ["cell"]) == "(empty grid)"
    assert main(["sweep", "--scenario", scenario("st_smoke.yaml"), "--grid", "init.spread=", "--jobs", "1"]) == 0
    assert "(empty grid)" in capsys.readouterr().out


def test_sweep_independent_of_jobs():
    grid = {"init.spread": [0, 10]}
    assert sweep(base_st(), grid, range(4), jobs=1) == sweep(base_st(), grid, range(4), jobs=2)


def test_same_seed_same_trace_every_system():
    for name in ("st_smoke.yaml", "main_pulser.yaml", "resync.yaml", "recursion_same.yaml"):
        scn = load_scenario(scenario(name))
        assert trace_bytes(run(scn).trace.records) == trace_bytes(run(scn).trace.records), name


def test_scenario_dict_roundtrip():
    scn = load_scenario(scenario("main_pulser.yaml"))
    again = Scenario.from_dict({k: v for k, v in scn.to_dict().items() if v is not None})
    assert again == scn
