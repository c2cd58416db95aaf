import csv
import json
import subprocess
import sys

import numpy as np

from cegal.cex import Counterexample
from cegal.cli import main, read_grid_csv
from cegal.dtmc import parse_explicit
from cegal.expert import DemoSet
from cegal.model import DecisionRule


def run_cli(capsys, *args):
    code = main(list(args))
    out, err = capsys.readouterr()
    return code, out, err


def small(tmp_path, *extra, side=3, n_agents=2):
    return ["--set", f"grid.side={side}", "--set", f"grid.n_agents={n_agents}",
            "--set", f"output_dir={tmp_path}", "--set", "property.hops=50",
            "--set", "demos.m=50", *extra]


def test_demos_then_al_is_deterministic(tmp_path, capsys):
    logs = []
    for run in ("a", "b"):
        out = tmp_path / run
        args = small(out, "--set", f"demos.path={out}/demos.jsonl", "--set", "learner.epsilon=1")
        assert run_cli(capsys, "demos", *args)[0] == 0
        code, stdout, _ = run_cli(capsys, "al", *args)
        assert code == 0
        logs.append((out / "al_log.jsonl").read_bytes())
        summary = json.loads(stdout)
        assert summary["mode"] == "al" and "probability" in summary
    assert logs[0] == logs[1]
    assert (tmp_path / "a" / "demos.jsonl").read_bytes() == (tmp_path / "b" / "demos.jsonl").read_bytes()


def test_al_outputs_round_trip(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "al", *small(tmp_path, "--set", "learner.epsilon=1"))
    assert code == 0
    records = [json.loads(ln) for ln in (tmp_path / "al_log.jsonl").read_text().splitlines()]
    assert records[-1]["event"] == "return" and "marginals" in records[-1]
    rule = DecisionRule.from_json(json.loads((tmp_path / "al_rule.json").read_text()))
    assert rule.n_states == 81
    for i in range(2):
        assert read_grid_csv(tmp_path / f"al_reward_agent{i}.csv").shape == (3, 3)
    assert (tmp_path / "al_reward.png").stat().st_size > 0


def test_cegal_outputs(tmp_path, capsys):
    code, stdout, _ = run_cli(capsys, "cegal", *small(tmp_path, "--set", "learner.epsilon=0.5"))
    assert code == 0
    summary = json.loads(stdout)
    assert summary["status"] == "Satisfy"
    assert summary["truth_return_final"] >= summary["truth_return_initial"] - 1e-9
    records = [json.loads(ln) for ln in (tmp_path / "cegal_log.jsonl").read_text().splitlines()]
    assert records[0]["event"] == "initial"
    assert records[-1]["terminated_by"] == summary["terminated_by"]
    assert all("seconds" not in r for r in records)
    cexs = [Counterexample.from_json(d) for d in json.loads((tmp_path / "counterexamples.json").read_text())]
    assert all(c.total > 0.25 for c in cexs)
    DecisionRule.from_json(json.loads((tmp_path / "cegal_rule.json").read_text()))
    assert (tmp_path / "cegal_trace.png").is_file()


def test_verify_never_unsafe_rule(tmp_path, capsys):
    rule = DecisionRule.deterministic([0] * 81, 25)
    (tmp_path / "stay.json").write_text(json.dumps(rule.to_json()))
    code, stdout, _ = run_cli(capsys, "verify", *small(tmp_path, "--set", "property.bound=0",
                                                        "--set", f"rule={tmp_path}/stay.json"))
    assert code == 0
    summary = json.loads(stdout)
    assert summary["status"] == "Satisfy" and summary["probability"] == 0.0
    assert summary["marginals"] == [0.0, 0.0]


def test_verify_expert_is_unsafe(tmp_path, capsys):
    code, stdout, _ = run_cli(capsys, "verify", *small(tmp_path))
    assert code == 0 and json.loads(stdout)["status"] == "Unsatisfy"


def test_export_round_trip(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "export", *small(tmp_path, side=3, n_agents=1))
    assert code == 0
    d = parse_explicit((tmp_path / "dtmc.tra").read_text(), (tmp_path / "dtmc.lab").read_text())
    assert d.n_states == 9 and d.initial_state == 0
    assert d.labels["unsafe"] == {4}
    rule = DecisionRule.from_json(json.loads((tmp_path / "expert_rule.json").read_text()))
    assert rule.is_deterministic()


def test_bench_small(tmp_path, capsys):
    code, stdout, _ = run_cli(capsys, "bench", *small(tmp_path, "--set", "bench.sizes=[3]"))
    assert code == 0
    with open(tmp_path / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["grid", "joint_states", "rule_s", "feature_s", "check_s", "cex_s"]
    assert rows[0]["grid"] == "3x3" and rows[0]["joint_states"] == "81"
    assert all(float(rows[0][k]) > 0 for k in ("rule_s", "feature_s", "check_s", "cex_s"))
    assert (tmp_path / "bench.png").is_file()


def test_demos_file_reused(tmp_path, capsys):
    path = tmp_path / "d.jsonl"
    run_cli(capsys, "demos", *small(tmp_path, "--set", f"demos.path={path}", "--set", "demos.T=5"))
    demos = DemoSet.read_jsonl(path)
    assert len(demos) == 50 and demos.horizon == 5
    # a grid that cannot hold these states is rejected
    code, _, err = run_cli(capsys, "al", *small(tmp_path, "--set", f"demos.path={path}",
                                                 side=3, n_agents=1))
    assert code == 2 and json.loads(err)["error"] == "ConfigError"


def test_config_errors_exit_2(tmp_path, capsys):
    code, out, err = run_cli(capsys, "verify", "--set", "learner.gamma=2")
    assert code == 2 and out == ""
    rec = json.loads(err)
    assert rec["mode"] == "verify" and "gamma" in rec["message"]
    code, _, err = run_cli(capsys, "al", "--config", str(tmp_path / "missing.json"))
    assert code == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_states": 81, "n_actions": 25, "rule": {"0": {"0": 0.5}}}))
    code, _, err = run_cli(capsys, "verify", *small(tmp_path, "--set", f"rule={bad}"))
    assert code == 1 and json.loads(err)["error"]


def test_wrong_rule_shape(tmp_path, capsys):
    rule = DecisionRule.uniform(9, 5)
    (tmp_path / "r.json").write_text(json.dumps(rule.to_json()))
    code, _, err = run_cli(capsys, "verify", *small(tmp_path, "--set", f"rule={tmp_path}/r.json"))
    assert code == 2 and "shape" in json.loads(err)["message"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cegal", "verify", *small(tmp_path, side=3, n_agents=1)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["mode"] == "verify"


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": {"side": 3, "n_agents": 1}, "output_dir": str(tmp_path / "o"),
                               "property": {"hops": 20}, "plots": False}))
    code, stdout, _ = run_cli(capsys, "al", "--config", str(cfg), "--set", "learner.epsilon=1")
    assert code == 0
    assert not list((tmp_path / "o").glob("*.png"))
    grid = read_grid_csv(tmp_path / "o" / "al_reward_agent0.csv")
    assert np.isfinite(grid).all()
