"""Command-line experiment runner.

    cegal <mode> --config <file> [--set key=value]...

Modes: demos, al, cegal, verify, export, bench. A one-line JSON summary goes
to stdout; failures print a JSON error record to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from functools import cached_property
from pathlib import Path

import numpy as np

from .cex import CexError, counterexample_for
from .checker import agent_marginals, check_dtmc, unsafe_reach
from .config import MODES, ConfigError, ExperimentConfig, load_config
from .dtmc import export_explicit, induce_dtmc
from .expert import DemoSet, estimate_mu_E, expert_rule, generate_demos
from .learner import apprenticeship_learning, cegal_run, initial_safe_rule
from .model import (DecisionRule, FeatureMap, build_grid_world, default_grid_spec,
                    joint_cell_rewards, per_agent_cell_grid, reward_from_weights)
from .solve import feature_expectations_exact, value_iteration

log = logging.getLogger("cegal")

BENCH_FIELDS = ("grid", "joint_states", "rule_s", "feature_s", "check_s", "cex_s")


def _dump_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(_dump_line(rec) + "\n")


def write_json(path: Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def write_grid_csv(path: Path, grid: np.ndarray) -> None:
    np.savetxt(path, np.asarray(grid), delimiter=",", fmt="%.12g")


def read_grid_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


class Experiment:
    """Lazily built game, features and expert data for one config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = cfg.output_dir
        self.out.mkdir(parents=True, exist_ok=True)

    @cached_property
    def game(self):
        return build_grid_world(self.cfg.grid, self.cfg.gamma)

    @cached_property
    def features(self):
        return FeatureMap.one_hot(self.game.n_states)

    @cached_property
    def truth(self) -> np.ndarray:
        return joint_cell_rewards(self.cfg.grid)

    @cached_property
    def expert(self) -> DecisionRule:
        return expert_rule(self.game, self.truth)

    def demos(self) -> DemoSet:
        p = self.cfg.demos.path
        if p is not None and p.is_file():
            demos = DemoSet.read_jsonl(p)
            if int(demos.states.max()) >= self.game.n_states:
                raise ConfigError(f"demonstrations in {p} do not fit this grid")
            return demos
        d = self.cfg.demos
        return generate_demos(self.game, self.truth, m=d.m, T=d.T, seed=d.seed, rule=self.expert)

    def mu_E(self) -> np.ndarray:
        return estimate_mu_E(self.demos(), self.features, self.game.discount)

    def load_rule(self, path) -> DecisionRule:
        rule = DecisionRule.from_json(json.loads(Path(path).read_text()))
        if (rule.n_states, rule.n_actions) != (self.game.n_states, self.game.n_actions):
            raise ConfigError(f"rule in {path} has shape {(rule.n_states, rule.n_actions)}, "
                              f"game needs {(self.game.n_states, self.game.n_actions)}")
        return rule

    def rule_or_expert(self) -> DecisionRule:
        return self.load_rule(self.cfg.rule) if self.cfg.rule else self.expert

    def safety(self, rule: DecisionRule) -> dict:
        dtmc = induce_dtmc(self.game, rule)
        v = check_dtmc(dtmc, self.cfg.formula)
        out = {"status": v.status, "probability": v.probability}
        if all(f"unsafe_{i}" in dtmc.labels for i in range(self.game.n_agents)):
            out["marginals"] = agent_marginals(dtmc, self.cfg.formula.path, self.game.n_agents)
        return out

    def reward_outputs(self, prefix: str, weights) -> list[str]:
        if weights is None:
            return []
        reward = reward_from_weights(self.game, self.features, weights)
        spec = self.cfg.grid
        grids = [per_agent_cell_grid(spec, reward, i) for i in range(spec.n_agents)]
        files = []
        for i, g in enumerate(grids):
            path = self.out / f"{prefix}_reward_agent{i}.csv"
            write_grid_csv(path, g)
            files.append(str(path))
        if self.cfg.plots:
            from .plotting import reward_heatmaps
            files.append(str(reward_heatmaps(spec, grids, self.out / f"{prefix}_reward.png",
                                             title=f"{prefix} learned reward")))
        return files


# ---------------------------------------------------------------------------
# modes

def run_demos(ex: Experiment) -> dict:
    d = ex.cfg.demos
    demos = generate_demos(ex.game, ex.truth, m=d.m, T=d.T, seed=d.seed, rule=ex.expert)
    path = d.path or ex.out / "demos.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    demos.write_jsonl(path)
    return {"demos": str(path), "m": len(demos), "T": demos.horizon}


def run_al(ex: Experiment) -> dict:
    mu_E = ex.mu_E()
    lp = ex.cfg.learner
    res = apprenticeship_learning(ex.game, ex.features, mu_E, lp.epsilon, lp.max_iter)
    safety = ex.safety(res.rule)
    records = [{"iteration": i + 1, "delta": d} for i, d in enumerate(res.deltas)]
    records.append({"event": "return", "converged": res.converged,
                    "distance": float(np.linalg.norm(mu_E - res.mu)),
                    "truth_return": float(ex.truth @ res.mu), **safety})
    write_jsonl(ex.out / "al_log.jsonl", records)
    write_json(ex.out / "al_rule.json", res.rule.to_json())
    files = ex.reward_outputs("al", res.weights)
    return {"iterations": len(res.deltas), "converged": res.converged, **safety,
            "files": ["al_log.jsonl", "al_rule.json", *files]}


def run_cegal(ex: Experiment) -> dict:
    cfg = ex.cfg
    mu_E = ex.mu_E()
    if cfg.initial_rule:
        pi0 = ex.load_rule(cfg.initial_rule)
    else:
        pi0 = initial_safe_rule(ex.game, cfg.formula)
    res = cegal_run(ex.game, ex.features, mu_E, cfg.formula, cfg.learner, pi0)
    mu0 = feature_expectations_exact(ex.game, pi0, ex.features)
    safety = ex.safety(res.rule)
    records = [{k: v for k, v in r.items() if k != "seconds"} for r in res.log]
    final = records[-1]
    final.update(safety)
    final["truth_return_initial"] = float(ex.truth @ mu0)
    final["truth_return_final"] = float(ex.truth @ res.mu)
    write_jsonl(ex.out / "cegal_log.jsonl", records)
    write_json(ex.out / "cegal_rule.json", res.rule.to_json())
    write_json(ex.out / "counterexamples.json", [c.to_json() for c in res.counterexamples])
    files = ex.reward_outputs("cegal", res.weights)
    if cfg.plots:
        from .plotting import run_trace
        files.append(str(run_trace(res.log, ex.out / "cegal_trace.png", cfg.formula.bound)))
    return {"iterations": res.iterations, "terminated_by": res.terminated_by, **safety,
            "truth_return_initial": final["truth_return_initial"],
            "truth_return_final": final["truth_return_final"],
            "files": ["cegal_log.jsonl", "cegal_rule.json", "counterexamples.json", *files]}


def run_verify(ex: Experiment) -> dict:
    return {"formula": str(ex.cfg.formula), **ex.safety(ex.rule_or_expert())}


def run_export(ex: Experiment) -> dict:
    rule = ex.rule_or_expert()
    trans, labels = export_explicit(induce_dtmc(ex.game, rule))
    (ex.out / "dtmc.tra").write_text(trans + "\n")
    (ex.out / "dtmc.lab").write_text(labels + "\n")
    if not ex.cfg.rule:
        write_json(ex.out / "expert_rule.json", rule.to_json())
    return {"files": ["dtmc.tra", "dtmc.lab"], "states": ex.game.n_states}


def bench_row(side: int, n_agents: int, gamma: float, bound: float, repeats: int) -> dict:
    """Mean seconds per call of the four per-iteration components on the
    default layout: planning for the ground-truth reward, exact feature
    expectations, model checking (DTMC induction plus checking with
    t = joint state count) and counterexample generation."""
    spec = default_grid_spec(side, n_agents)
    game = build_grid_world(spec, gamma)
    features = FeatureMap.one_hot(game.n_states)
    reward = joint_cell_rewards(spec)
    phi = unsafe_reach(bound, game.n_states)
    times = {"rule_s": 0.0, "feature_s": 0.0, "check_s": 0.0, "cex_s": 0.0}
    for rep in range(repeats + 1):
        t0 = time.perf_counter()
        rule, _ = value_iteration(game, reward)
        t1 = time.perf_counter()
        feature_expectations_exact(game, rule, features)
        t2 = time.perf_counter()
        dtmc = induce_dtmc(game, rule)
        verdict = check_dtmc(dtmc, phi)
        t3 = time.perf_counter()
        if not verdict.satisfied:
            try:
                counterexample_for(dtmc, phi)
            except CexError:
                pass
        t4 = time.perf_counter()
        if rep == 0:
            continue  # warm-up pass, untimed
        times["rule_s"] += t1 - t0
        times["feature_s"] += t2 - t1
        times["check_s"] += t3 - t2
        times["cex_s"] += t4 - t3
    row = {"grid": f"{side}x{side}", "joint_states": game.n_states}
    row.update({k: v / repeats for k, v in times.items()})
    return row


def run_bench(ex: Experiment) -> dict:
    b = ex.cfg.bench
    sizes = sorted(set(b.sizes) | ({16} if b.include_16 else set()))
    rows = []
    for side in sizes:
        log.info("bench %dx%d", side, side)
        rows.append(bench_row(side, ex.cfg.grid.n_agents, ex.cfg.gamma, ex.cfg.formula.bound, b.repeats))
    path = ex.out / "bench.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    files = [str(path)]
    if ex.cfg.plots:
        from .plotting import bench_chart
        files.append(str(bench_chart(rows, ex.out / "bench.png")))
    return {"rows": rows, "files": files}


RUNNERS = {"demos": run_demos, "al": run_al, "cegal": run_cegal, "verify": run_verify,
           "export": run_export, "bench": run_bench}


def run(mode: str, cfg: ExperimentConfig) -> dict:
    if mode not in RUNNERS:
        raise ConfigError(f"unknown mode {mode!r}")
    ex = Experiment(cfg)
    return {"mode": mode, **RUNNERS[mode](ex)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cegal", description="Safety-aware multi-agent apprenticeship learning.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set learner.epsilon=5")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _fail(mode: str, exc: BaseException, code: int) -> int:
    rec = {"error": type(exc).__name__, "message": str(exc), "mode": mode}
    print(_dump_line(rec), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        summary = run(args.mode, cfg)
    except ConfigError as exc:
        return _fail(args.mode, exc, 2)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        log.debug("failure", exc_info=True)
        return _fail(args.mode, exc, 1)
    print(_dump_line(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
