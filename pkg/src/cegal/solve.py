"""Planning and policy evaluation on Markov games.

Rewards are state-based, r(s), unless a (S, A) table is passed to Nash-Q.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dtmc import induce_dtmc
from .model import DecisionRule, FeatureMap, MarkovGame

VI_TOL = 1e-8
VI_SWEEP_CAP = 10 ** 5


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class ValueTable:
    V: np.ndarray
    Q: np.ndarray  # (S, A)
    sweeps: int = 0


def _q_values(game: MarkovGame, reward: np.ndarray, V: np.ndarray) -> np.ndarray:
    return reward[:, None] + game.discount * (game.transition @ V).reshape(game.n_states, game.n_actions)


def value_iteration(game: MarkovGame, reward, tol: float = VI_TOL,
                    max_sweeps: int = VI_SWEEP_CAP, V0=None) -> tuple[DecisionRule, ValueTable]:
    """V <- r + gamma * max_a P_a V until the sup-norm change drops below ``tol``.
    Returns the greedy deterministic rule (ties to the lowest action index)."""
    reward = np.asarray(reward, dtype=float).ravel()
    if reward.size != game.n_states:
        raise SolverError(f"reward has {reward.size} entries for {game.n_states} states")
    V = np.zeros(game.n_states) if V0 is None else np.array(V0, dtype=float)
    residual = math.inf
    for sweep in range(1, max_sweeps + 1):
        Q = _q_values(game, reward, V)
        V_new = Q.max(axis=1)
        residual = float(np.max(np.abs(V_new - V)))
        V = V_new
        if residual < tol:
            break
    else:
        raise SolverError(f"value iteration did not converge in {max_sweeps} sweeps", residual)
    Q = _q_values(game, reward, V)
    rule = DecisionRule.deterministic(np.argmax(Q, axis=1), game.n_actions)
    return rule, ValueTable(V, Q, sweeps=sweep)


def occupancy(game: MarkovGame, rule: DecisionRule, start: int | None = None) -> np.ndarray:
    """Discounted state occupancy d = sum_t gamma^t Pr(s_t = . | s_0 = start).

    Solved directly: (I - gamma P_rule^T) d = e_start."""
    s0 = game.initial_state if start is None else start
    P = induce_dtmc(game, rule).P
    n = game.n_states
    e = np.zeros(n)
    e[s0] = 1.0
    if game.discount == 0.0:
        return e
    A = (sp.identity(n, format="csc") - game.discount * P.T).tocsc()
    return spla.spsolve(A, e)


def feature_expectations_exact(game: MarkovGame, rule: DecisionRule, features: FeatureMap) -> np.ndarray:
    return features.weighted_sum(occupancy(game, rule))


def horizon_for(discount: float, tol: float = 1e-6) -> int:
    """Smallest T with discount**T < tol."""
    if discount <= 0.0:
        return 1
    return max(1, math.ceil(math.log(tol) / math.log(discount)))


class _Sampler:
    """Vectorised sampling of successors for many (state, action) rows."""

    def __init__(self, game: MarkovGame):
        T = game.transition
        self.indptr, self.indices = T.indptr, T.indices
        lengths = np.diff(T.indptr)
        self.cum = T.data.astype(float).copy()
        for j in range(1, int(lengths.max(initial=1))):
            rows = np.flatnonzero(lengths > j)
            pos = T.indptr[rows] + j
            self.cum[pos] += self.cum[pos - 1]
        last = T.indptr[1:][lengths > 0] - 1
        self.cum[last] = np.inf  # guard against rounding in the last bucket
        self.width = int(np.diff(T.indptr).max(initial=1))

    def step(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        lo = self.indptr[rows]
        length = self.indptr[rows + 1] - lo
        offs = np.zeros(rows.size, dtype=np.int64)
        for j in range(self.width - 1):
            idx = lo + j
            move = (j < length - 1) & (u >= self.cum[np.minimum(idx, self.cum.size - 1)])
            offs += move
        return self.indices[lo + offs]


def sample_actions(rule: DecisionRule, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    probs = rule.probs[states]
    if rule.is_deterministic():
        return np.argmax(probs, axis=1)
    cum = np.cumsum(probs, axis=1)
    u = rng.random(states.size)[:, None]
    return np.minimum((u >= cum).sum(axis=1), rule.n_actions - 1)


def rollout(game: MarkovGame, rule: DecisionRule, m: int, T: int, seed: int,
            start: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """m trajectories of T steps: (states, actions), each shaped (m, T)."""
    rng = np.random.default_rng(seed)
    sampler = _Sampler(game)
    s = np.full(m, game.initial_state if start is None else start, dtype=np.int64)
    states = np.empty((m, T), dtype=np.int64)
    actions = np.empty((m, T), dtype=np.int64)
    for t in range(T):
        a = sample_actions(rule, s, rng)
        states[:, t], actions[:, t] = s, a
        if t + 1 < T:
            s = sampler.step(s * game.n_actions + a, rng.random(m))
    return states, actions


def discounted_feature_sums(states: np.ndarray, features: FeatureMap, discount: float):
    """Per trajectory sum_t discount^t f(s_t); (m, d), sparse when the map is."""
    m, T = states.shape
    disc = discount ** np.arange(T)
    coeff = sp.csr_matrix((np.broadcast_to(disc, (m, T)).ravel(),
                           (np.repeat(np.arange(m), T), states.ravel())),
                          shape=(m, features.n_states))
    return coeff @ features.matrix


def mean_and_stderr(sums) -> tuple[np.ndarray, np.ndarray]:
    m = sums.shape[0]
    if sp.issparse(sums):
        mean = np.asarray(sums.mean(axis=0)).ravel()
        sq = np.asarray(sums.multiply(sums).mean(axis=0)).ravel()
    else:
        mean = sums.mean(axis=0)
        sq = (sums * sums).mean(axis=0)
    if m < 2:
        return mean, np.full_like(mean, np.inf)
    var = np.maximum(sq - mean * mean, 0.0) * m / (m - 1)
    return mean, np.sqrt(var / m)


def feature_expectations_mc(game: MarkovGame, rule: DecisionRule, features: FeatureMap, m: int,
                            T: int | None = None, seed: int = 0,
                            return_stderr: bool = False):
    """Monte-Carlo mean of discounted feature sums over m simulated trajectories.

    ``T`` counts transitions (states s_0..s_T are visited); by default the
    smallest T with gamma**T < 1e-6."""
    if m < 1:
        raise ValueError("need at least one rollout")
    T = horizon_for(game.discount) if T is None else T
    states, _ = rollout(game, rule, m, T + 1, seed)
    mean, se = mean_and_stderr(discounted_feature_sums(states, features, game.discount))
    return (mean, se) if return_stderr else mean


# ---------------------------------------------------------------------------
# Nash-Q learning (identical-interest stage games)

def harmonic_schedule(visits: int) -> float:
    return 1.0 / (1.0 + visits)


def polynomial_schedule(power: float) -> Callable[[int], float]:
    def alpha(visits: int) -> float:
        return 1.0 / (1.0 + visits) ** power
    return alpha


def constant_schedule(value: float) -> Callable[[int], float]:
    return lambda visits: value


@dataclass
class QTableSet:
    """One table per agent over (joint state, joint action)."""
    tables: list[np.ndarray]
    visits: np.ndarray

    def greedy_rule(self, agent: int = 0) -> DecisionRule:
        Q = self.tables[agent]
        return DecisionRule.deterministic(np.argmax(Q, axis=1), Q.shape[1])


def nash_value(q_row: np.ndarray) -> float:
    """Stage-game value when all agents share the payoff: the joint maximum."""
    return float(q_row.max())


def nash_q_learning(game: MarkovGame, reward, episodes: int, steps: int,
                    alpha: Callable[[int], float] = harmonic_schedule,
                    epsilon: float = 0.1, seed: int = 0,
                    start: int | None = None) -> tuple[QTableSet, DecisionRule]:
    """Tabular Nash-Q with epsilon-greedy joint exploration.

    ``reward`` is per state (S,), per (state, joint action) (S, A), or a list
    with one such table per agent. Every agent's table gets
    Q(s,a) <- (1 - alpha) Q(s,a) + alpha [r(s,a) + gamma NashValue(Q(s'))].
    """
    S, A, N = game.n_states, game.n_actions, game.n_agents
    rewards = reward if isinstance(reward, list) else [reward] * N
    r_tabs = []
    for r in rewards:
        r = np.asarray(r, dtype=float)
        r_tabs.append(np.repeat(r[:, None], A, axis=1) if r.ndim == 1 else r)
    if any(r.shape != (S, A) for r in r_tabs):
        raise ValueError("reward table has the wrong shape")

    rng = np.random.default_rng(seed)
    sampler = _Sampler(game)
    tables = [np.zeros((S, A)) for _ in range(N)]
    visits = np.zeros((S, A), dtype=np.int64)
    gamma = game.discount
    s0 = game.initial_state if start is None else start
    lead = tables[0]
    for _ in range(episodes):
        s = s0
        us = rng.random(steps)
        explore = rng.random(steps) < epsilon
        random_a = rng.integers(A, size=steps)
        for t in range(steps):
            a = int(random_a[t]) if explore[t] else int(np.argmax(lead[s]))
            row = s * A + a
            s_next = int(sampler.step(np.array([row]), us[t:t + 1])[0])
            lr = alpha(int(visits[s, a]))
            visits[s, a] += 1
            for y in range(N):
                Qy = tables[y]
                target = r_tabs[y][s, a] + gamma * nash_value(Qy[s_next])
                Qy[s, a] = (1.0 - lr) * Qy[s, a] + lr * target
            s = s_next
    qs = QTableSet(tables, visits)
    return qs, qs.greedy_rule(0)
