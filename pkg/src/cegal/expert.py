"""Synthetic joint expert demonstrations and the empirical feature expectation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DecisionRule, FeatureMap, MarkovGame
from .solve import discounted_feature_sums, horizon_for, mean_and_stderr, rollout, value_iteration

DEFAULT_DEMOS = 1000


@dataclass
class DemoSet:
    """m joint trajectories; states[i, t], actions[i, t]."""
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.states.shape != self.actions.shape or self.states.ndim != 2:
            raise ValueError("states and actions must both be (m, T)")

    def __len__(self):
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def trajectory(self, i: int) -> list[tuple[int, int]]:
        return list(zip(self.states[i].tolist(), self.actions[i].tolist()))

    def agent_view(self, game: MarkovGame, agent: int) -> tuple[np.ndarray, np.ndarray]:
        """Project joint trajectories onto one agent's cells and actions."""
        Qs, Qa, N = game.per_agent_states, game.per_agent_actions, game.n_agents
        shift = N - 1 - agent
        return (self.states // Qs ** shift) % Qs, (self.actions // Qa ** shift) % Qa

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(len(self)):
                fh.write(json.dumps([[int(s), int(a)] for s, a in self.trajectory(i)],
                                    separators=(",", ":")))
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path) -> "DemoSet":
        trajs = [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not trajs:
            raise ValueError(f"{path} holds no trajectories")
        arr = np.array(trajs, dtype=np.int64)
        return cls(arr[:, :, 0], arr[:, :, 1])


def expert_rule(game: MarkovGame, ground_truth_reward) -> DecisionRule:
    """Optimal joint rule for the shared reward; in an identical-interest game
    with independent agents this joint argmax is an equilibrium."""
    rule, _ = value_iteration(game, ground_truth_reward)
    return rule


def generate_demos(game: MarkovGame, ground_truth_reward, m: int = DEFAULT_DEMOS,
                   T: int | None = None, seed: int = 0, rule: DecisionRule | None = None) -> DemoSet:
    if m < 1:
        raise ValueError("m must be >= 1")
    T = horizon_for(game.discount) if T is None else T
    if T < 1:
        raise ValueError("T must be >= 1")
    rule = expert_rule(game, ground_truth_reward) if rule is None else rule
    states, actions = rollout(game, rule, m, T, seed)
    return DemoSet(states, actions)


def estimate_mu_E(demos: DemoSet, features: FeatureMap, discount: float,
                  return_stderr: bool = False):
    """(1/m) sum over demos of sum_t discount^t f(s_t)."""
    if len(demos) == 0:
        raise ValueError("empty demonstration set")
    mean, se = mean_and_stderr(discounted_feature_sums(demos.states, features, discount))
    return (mean, se) if return_stderr else mean
