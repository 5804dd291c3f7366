import json
import os
import subprocess
import sys

import pytest

from conftest import FIXTURE
from hiergame import gen_scenario, load_instance, save_instance, solve_mlmf
from hiergame.cli import main
from hiergame.trace import CSV_COLUMNS


def run(*argv):
    return main([str(a) for a in argv])


def test_solve_fixture(tmp_path, capsys):
    assert run("solve", "--instance", FIXTURE, "--solver", "basic", "--quiet") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["allocation"][0]["x"] == pytest.approx(2.0, abs=1e-8)
    assert summary["prices"][0]["theta"] == pytest.approx(2.0, abs=1e-8)
    assert summary["final_epsilon"] is None


def test_generate_solve_round_trip(tmp_path):
    inst_path = tmp_path / "inst.json"
    assert run("generate", "--kind", "crowd_sensing", "--controllers", 3, "--agents", 9,
               "--seed", 4, "--out", inst_path, "--quiet") == 0
    assert load_instance(inst_path).to_json() == gen_scenario("crowd_sensing", 3, 9, seed=4).to_json()
    trace, summary = tmp_path / "t.csv", tmp_path / "s.json"
    assert run("solve", "--instance", inst_path, "--solver", "mlmf", "--oracle", "--trace", trace,
               "--summary", summary, "--quiet") == 0
    out = json.loads(summary.read_text())
    direct = solve_mlmf(gen_scenario("crowd_sensing", 3, 9, seed=4))
    assert {(r["agent"], r["controller"]): r["x"] for r in out["allocation"]} == direct.allocation.x
    assert trace.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert out["final_epsilon"] <= 1e-6
    assert out["config"]["solver"] == "mlmf"


def test_ten_by_hundred_solve(tmp_path):
    inst_path, summary = tmp_path / "inst.json", tmp_path / "s.json"
    run("generate", "--kind", "crowd_sensing", "--controllers", 10, "--agents", 100,
        "--out", inst_path, "--quiet")
    assert run("solve", "--instance", inst_path, "--solver", "mlmf", "--oracle",
               "--summary", summary, "--quiet") == 0
    assert json.loads(summary.read_text())["final_epsilon"] <= 1e-3


def test_form_mismatch_exit_2(capsys):
    assert run("solve", "--instance", FIXTURE, "--solver", "mlmf") == 2
    assert "form" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["solve"],
    ["solve", "--instance", "x.json", "--bogus"],
    ["sweep", "--out", "s.csv", "--sizes", "ten"],
    ["sweep", "--out", "s.csv", "--epsilons", "1e-5:1e-1"],
])
def test_usage_exit_64(argv, capsys):
    assert main(argv) == 64
    assert "usage" in capsys.readouterr().err


def test_non_convergence_exit_3(tmp_path):
    inst_path = tmp_path / "inst.json"
    save_instance(gen_scenario("crowd_sensing", 2, 4, seed=0), inst_path)
    trace = tmp_path / "t.csv"
    assert run("solve", "--instance", inst_path, "--max-outer", 2, "--trace", trace, "--quiet") == 3
    assert len(trace.read_text().splitlines()) == 3


def test_infeasible_exit_4(tmp_path):
    bad = load_instance(FIXTURE).to_dict()
    bad["form"] = "single-controller-coupled"
    bad["agents"].append(dict(bad["agents"][0], id="b"))
    bad["controllers"][0]["task_terms"]["b"] = bad["controllers"][0]["task_terms"]["a"]
    # the boxes cap the sum at 20
    bad["constraints"] = [{"name": "k", "owner": "controller", "owner_id": "c", "kind": "eq",
                           "rhs": 100.0, "terms": [["a", "c", 1.0], ["b", "c", 1.0]]}]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert run("solve", "--instance", path, "--quiet") == 4


def test_missing_file_is_not_a_crash(tmp_path):
    assert run("solve", "--instance", tmp_path / "nope.json", "--quiet") == 2


def test_sweep(tmp_path):
    out, summary = tmp_path / "sweep.csv", tmp_path / "s.json"
    assert run("sweep", "--sizes", "2x4,3x6", "--epsilons", "1e-1:1e-3", "--seeds", 2,
               "--out", out, "--summary", summary, "--quiet") == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n_controllers,n_agents,epsilon,iterations,seeds_ok,seeds_failed"
    assert len(lines) == 7
    s = json.loads(summary.read_text())
    assert s["config"]["epsilons"] == [0.1, 0.01, 0.001]
    assert set(s["fit_by_size"]) == {"2x4", "3x6"}


def test_verify(tmp_path, capsys):
    inst_path, summary = tmp_path / "inst.json", tmp_path / "s.json"
    save_instance(gen_scenario("fog", 3, 9, seed=1), inst_path)
    run("solve", "--instance", inst_path, "--summary", summary, "--quiet")
    assert run("verify", "--instance", inst_path, "--allocation", summary, "--quiet") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["multipliers"] == "allocation file"

    data = json.loads(summary.read_text())
    for r in data["allocation"]:
        r["x"] += 0.05
    moved = tmp_path / "moved.json"
    moved.write_text(json.dumps(data["allocation"]))
    assert run("verify", "--instance", inst_path, "--allocation", moved, "--quiet") == 2
    report = json.loads(capsys.readouterr().out)
    assert not report["passed"] and report["multipliers"] == "oracle"


def test_verify_rejects_malformed_allocation(tmp_path):
    path = tmp_path / "a.json"
    path.write_text(json.dumps([{"agent": "a"}]))
    assert run("verify", "--instance", FIXTURE, "--allocation", path, "--quiet") == 2


def test_threads_env_gives_identical_bytes(tmp_path):
    inst_path = tmp_path / "inst.json"
    save_instance(gen_scenario("crowd_sensing", 4, 30, seed=2), inst_path)
    outputs = []
    for threads in ("1", "0", "3"):
        trace = tmp_path / f"t{threads}.csv"
        env = dict(os.environ, HIERGAME_THREADS=threads)
        subprocess.run([sys.executable, "-m", "hiergame.cli", "solve", "--instance", str(inst_path),
                        "--oracle", "--trace", str(trace), "--quiet"],
                       check=True, env=env, stdout=subprocess.DEVNULL)
        outputs.append(trace.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
