"""Experiment configuration: one JSON document plus dotted ``key=value`` overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .checker import CheckerError, ProbOp, parse_formula, unsafe_reach
from .learner import LearnerParams
from .model import GridWorldSpec, ModelError

MODES = ("demos", "al", "cegal", "verify", "export", "bench")

DEFAULTS: dict[str, Any] = {
    "grid": {"side": 8, "n_agents": 2},
    "learner": {"epsilon": 10.0, "sigma": 1e-5, "alpha": 0.5, "gamma": 0.99,
                "max_iter": 200},
    "property": {"bound": 0.25, "hops": 4096, "label": "unsafe", "formula": None},
    "demos": {"m": 1000, "T": None, "seed": 0, "path": None},
    "cex": {"k_max": 5000, "depth_cap": None},
    "initial_rule": None,
    "rule": None,
    "output_dir": "out",
    "plots": True,
    "bench": {"sizes": [3, 8], "include_16": False, "repeats": 1, "seed": 0},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_value(text: str) -> Any:
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    """Set ``a.b.c=value`` in place, creating intermediate sections."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    parts = key.strip().split(".")
    node = doc
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"{key!r}: {p!r} is not a section")
        node = nxt
    node[parts[-1]] = parse_value(raw)


@dataclass
class DemoParams:
    m: int
    T: int | None
    seed: int
    path: Path | None


@dataclass
class BenchParams:
    sizes: list[int]
    include_16: bool
    repeats: int
    seed: int


@dataclass
class ExperimentConfig:
    grid: GridWorldSpec
    gamma: float
    learner: LearnerParams
    formula: ProbOp
    demos: DemoParams
    bench: BenchParams
    output_dir: Path
    initial_rule: Path | None
    rule: Path | None
    plots: bool
    raw: dict

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def _path(value, base: Path) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _existing(value, base: Path, what: str) -> Path | None:
    p = _path(value, base)
    if p is not None and not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def build_config(doc: Mapping, base_dir: Path | str = ".") -> ExperimentConfig:
    """Validate a merged document. Relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    raw = _merge(DEFAULTS, doc)
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        grid = GridWorldSpec.from_json(raw["grid"])
    except (ModelError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad grid section: {exc}") from exc

    lp = raw["learner"]
    gamma = float(lp["gamma"])
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"gamma must lie in [0, 1), got {gamma}")
    params = LearnerParams(epsilon=float(lp["epsilon"]), sigma=float(lp["sigma"]),
                           alpha=float(lp["alpha"]), max_iter=int(lp["max_iter"]),
                           k_max=int(raw["cex"]["k_max"]), depth_cap=raw["cex"]["depth_cap"])
    if min(params.epsilon, params.sigma, params.max_iter, params.k_max) <= 0:
        raise ConfigError("epsilon, sigma, max_iter and k_max must be positive")
    if not 0.0 < params.alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {params.alpha}")

    prop = raw["property"]
    try:
        if prop.get("formula"):
            formula = parse_formula(prop["formula"])
        else:
            formula = unsafe_reach(float(prop["bound"]), int(prop["hops"]),
                                   prop.get("label", "unsafe"))
    except CheckerError as exc:
        raise ConfigError(f"bad property: {exc}") from exc
    if not isinstance(formula, ProbOp):
        raise ConfigError("the property must be a P-operator formula")

    d = raw["demos"]
    demos = DemoParams(int(d["m"]), None if d["T"] is None else int(d["T"]), int(d["seed"]),
                       _path(d["path"], base))
    if demos.m < 1:
        raise ConfigError("demos.m must be >= 1")
    b = raw["bench"]
    bench = BenchParams([int(s) for s in b["sizes"]], bool(b["include_16"]), int(b["repeats"]),
                        int(b["seed"]))
    if bench.repeats < 1 or any(s < 3 for s in bench.sizes):
        raise ConfigError("bench needs repeats >= 1 and sizes >= 3")

    return ExperimentConfig(
        grid=grid, gamma=gamma, learner=params, formula=formula, demos=demos, bench=bench,
        output_dir=_path(raw["output_dir"], base),
        initial_rule=_existing(raw["initial_rule"], base, "initial rule"),
        rule=_existing(raw["rule"], base, "rule"),
        plots=bool(raw["plots"]), raw=raw)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    doc: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    for item in overrides:
        apply_override(doc, item)
    return build_config(doc, base)
