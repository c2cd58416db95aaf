"""Markov games, joint index algebra, feature maps and the grid-world builder."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

# Per-agent grid actions, in this order.
STAY, LEFT, DOWN, RIGHT, UP = range(5)
ACTION_NAMES = ("stay", "left", "down", "right", "up")
N_GRID_ACTIONS = 5

ROW_TOL = 1e-12


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# mixed-radix index algebra (agent 0 is the most significant digit)

def encode(digits: Sequence[int], radix: int) -> int:
    index = 0
    for d in digits:
        if not 0 <= d < radix:
            raise ModelError(f"digit {d} outside [0, {radix})")
        index = index * radix + int(d)
    return index


def decode(index: int, n_digits: int, radix: int) -> tuple[int, ...]:
    if not 0 <= index < radix ** n_digits:
        raise ModelError(f"index {index} outside [0, {radix ** n_digits})")
    digits = []
    for _ in range(n_digits):
        index, d = divmod(index, radix)
        digits.append(d)
    return tuple(reversed(digits))


def decode_all(n_digits: int, radix: int) -> np.ndarray:
    """Row i holds decode(i); shape (radix**n_digits, n_digits)."""
    idx = np.arange(radix ** n_digits)
    out = np.empty((idx.size, n_digits), dtype=np.int64)
    for pos in range(n_digits - 1, -1, -1):
        idx, out[:, pos] = np.divmod(idx, radix)
    return out


# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarkovGame:
    """N-agent game over joint states and joint actions.

    ``transition`` is a CSR matrix with one row per (state, action) pair,
    row ``s * n_actions + a``, holding P(s' | s, a).
    """

    n_agents: int
    per_agent_states: int
    per_agent_actions: int
    transition: sp.csr_matrix
    discount: float
    initial_state: int
    labels: Mapping[str, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_agents < 1 or self.per_agent_states < 1 or self.per_agent_actions < 1:
            raise ModelError("agent, state and action counts must be positive")
        if not 0.0 <= self.discount < 1.0:
            raise ModelError(f"discount {self.discount} outside [0, 1)")
        n, a = self.n_states, self.n_actions
        T = sp.csr_matrix(self.transition)
        if T.shape != (n * a, n):
            raise ModelError(f"transition shape {T.shape} != {(n * a, n)}")
        if T.nnz and (T.data.min() < 0 or T.data.max() > 1):
            raise ModelError("transition probabilities outside [0, 1]")
        sums = np.asarray(T.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
        if bad.size:
            s, act = divmod(int(bad[0]), a)
            raise ModelError(f"row (s={s}, a={act}) sums to {sums[bad[0]]!r}")
        if not 0 <= self.initial_state < n:
            raise ModelError(f"initial state {self.initial_state} out of range")
        labels = {}
        for name, states in self.labels.items():
            states = frozenset(int(s) for s in states)
            if any(not 0 <= s < n for s in states):
                raise ModelError(f"label {name!r} names an invalid state")
            labels[name] = states
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "labels", labels)

    @property
    def n_states(self) -> int:
        return self.per_agent_states ** self.n_agents

    @property
    def n_actions(self) -> int:
        return self.per_agent_actions ** self.n_agents

    def successors(self, s: int, a: int) -> list[tuple[int, float]]:
        row = s * self.n_actions + a
        T = self.transition
        lo, hi = T.indptr[row], T.indptr[row + 1]
        return list(zip(T.indices[lo:hi].tolist(), T.data[lo:hi].tolist()))

    def probability(self, s: int, a: int, s_next: int) -> float:
        return float(self.transition[s * self.n_actions + a, s_next])

    def decode_state(self, s: int) -> tuple[int, ...]:
        return decode(s, self.n_agents, self.per_agent_states)

    def decode_action(self, a: int) -> tuple[int, ...]:
        return decode(a, self.n_agents, self.per_agent_actions)

    def label_mask(self, name: str) -> np.ndarray:
        if name not in self.labels:
            raise KeyError(name)
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.labels[name])] = True
        return mask

    def with_discount(self, discount: float) -> "MarkovGame":
        return MarkovGame(self.n_agents, self.per_agent_states, self.per_agent_actions,
                          self.transition, discount, self.initial_state, self.labels)


def game_from_tables(transitions: np.ndarray, discount: float, initial_state: int = 0,
                     labels: Mapping[str, Iterable[int]] | None = None) -> MarkovGame:
    """Single-agent game from a dense (S, A, S) array; handy for small tests."""
    P = np.asarray(transitions, dtype=float)
    n, a, _ = P.shape
    return MarkovGame(1, n, a, sp.csr_matrix(P.reshape(n * a, n)), discount,
                      initial_state, {k: frozenset(v) for k, v in (labels or {}).items()})


# ---------------------------------------------------------------------------

class FeatureMap:
    """Joint state -> feature vector in [0, 1]^d, stored as an (S, d) matrix."""

    def __init__(self, matrix):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
            vals = matrix.data
        else:
            matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
            vals = matrix
        if vals.size and (vals.min() < 0 or vals.max() > 1):
            raise ModelError("feature entries must lie in [0, 1]")
        self.matrix = matrix

    @classmethod
    def one_hot(cls, n_states: int) -> "FeatureMap":
        return cls(sp.identity(n_states, format="csr"))

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __call__(self, s: int) -> np.ndarray:
        row = self.matrix[s]
        return row.toarray().ravel() if sp.issparse(row) else np.array(row, dtype=float)

    def weighted_sum(self, weights_over_states: np.ndarray) -> np.ndarray:
        """sum_s c[s] f(s) for per-state coefficients c."""
        return np.asarray(self.matrix.T @ np.asarray(weights_over_states, float)).ravel()


def reward_from_weights(game: MarkovGame, features: FeatureMap, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != features.dim:
        raise ModelError(f"weight dimension {w.size} != feature dimension {features.dim}")
    if features.n_states != game.n_states:
        raise ModelError("feature map does not cover the game's joint states")
    return np.asarray(features.matrix @ w).ravel()


# ---------------------------------------------------------------------------

class DecisionRule:
    """Per joint state, a distribution over joint actions; dense (S, A) array."""

    def __init__(self, probs):
        probs = np.array(probs, dtype=float)
        if probs.ndim != 2:
            raise ModelError("decision rule must be a 2-D (states, actions) array")
        if probs.size and probs.min() < 0:
            raise ModelError("negative action probability")
        sums = probs.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
        if bad.size:
            raise ModelError(f"rule row {int(bad[0])} sums to {sums[bad[0]]!r}")
        probs.setflags(write=False)
        self.probs = probs

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "DecisionRule":
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "DecisionRule":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all(self.probs.max(axis=1) == 1.0))

    def greedy(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    def __eq__(self, other):
        return isinstance(other, DecisionRule) and np.array_equal(self.probs, other.probs)

    __hash__ = None

    def to_json(self) -> dict:
        rows = {}
        for s in range(self.n_states):
            nz = np.flatnonzero(self.probs[s])
            rows[str(s)] = {str(int(a)): float(self.probs[s, a]) for a in nz}
        return {"n_states": self.n_states, "n_actions": self.n_actions, "rule": rows}

    @classmethod
    def from_json(cls, doc: Mapping) -> "DecisionRule":
        probs = np.zeros((int(doc["n_states"]), int(doc["n_actions"])))
        for s, row in doc["rule"].items():
            for a, p in row.items():
                probs[int(s), int(a)] = float(p)
        return cls(probs)


# ---------------------------------------------------------------------------
# grid worlds

Cell = tuple[int, int]


def _check_cells(side: int, cells) -> None:
    for r, c in cells:
        if not (0 <= r < side and 0 <= c < side):
            raise ModelError(f"cell {(r, c)} outside the {side}x{side} grid")


@dataclass(frozen=True)
class GridWorldSpec:
    """Square grid shared by ``n_agents`` independent agents.

    ``rewards`` is the ground-truth per-cell reward (side x side); the joint
    reward of a joint state is the sum over agents.
    """

    side: int
    n_agents: int
    unsafe: tuple[Cell, ...]
    goal: tuple[Cell, ...]
    init: Cell
    rewards: tuple[tuple[float, ...], ...]
    move_success_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "unsafe", tuple(tuple(map(int, c)) for c in self.unsafe))
        object.__setattr__(self, "goal", tuple(tuple(map(int, c)) for c in self.goal))
        object.__setattr__(self, "init", tuple(map(int, self.init)))
        object.__setattr__(self, "rewards", tuple(tuple(map(float, r)) for r in self.rewards))
        self.validate()

    def validate(self):
        if self.side < 1 or self.n_agents < 1:
            raise ModelError("side and n_agents must be positive")
        if len(self.rewards) != self.side or any(len(r) != self.side for r in self.rewards):
            raise ModelError(f"reward table must be {self.side}x{self.side}")
        _check_cells(self.side, [self.init, *self.goal, *self.unsafe])
        if not self.goal:
            raise ModelError("at least one goal cell is required")
        if set(self.goal) & set(self.unsafe):
            raise ModelError("goal and unsafe cells overlap")
        if self.init in self.goal or self.init in self.unsafe:
            raise ModelError("init cell must be neither goal nor unsafe")
        if not 0.0 <= self.move_success_prob <= 1.0:
            raise ModelError("move_success_prob outside [0, 1]")

    def cell_index(self, cell: Cell) -> int:
        return cell[0] * self.side + cell[1]

    def cell_rewards(self) -> np.ndarray:
        return np.asarray(self.rewards, dtype=float).ravel()

    def to_json(self) -> dict:
        return {
            "side": self.side,
            "n_agents": self.n_agents,
            "unsafe": [list(c) for c in self.unsafe],
            "goal": [list(c) for c in self.goal],
            "init": list(self.init),
            "rewards": [list(r) for r in self.rewards],
            "move_success_prob": self.move_success_prob,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "GridWorldSpec":
        """Missing layout fields fall back to :func:`default_grid_spec`."""
        side = int(doc["side"])
        n_agents = int(doc.get("n_agents", 1))
        base = default_grid_spec(side, n_agents) if side >= 3 else None

        def cells(key):
            if key in doc:
                return tuple(tuple(c) for c in doc[key])
            if base is None:
                raise ModelError(f"grid spec needs {key!r} for side < 3")
            return getattr(base, key)

        unsafe, goal = cells("unsafe"), cells("goal")
        _check_cells(side, [*unsafe, *goal])
        rewards = doc.get("rewards") or default_rewards(side, unsafe, goal)
        return cls(side=side, n_agents=n_agents, unsafe=unsafe, goal=goal,
                   init=tuple(doc.get("init", (0, 0))), rewards=rewards,
                   move_success_prob=float(doc.get("move_success_prob", 0.5)))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def default_rewards(side: int, unsafe: Sequence[Cell], goal: Sequence[Cell]) -> list[list[float]]:
    """Graded ground-truth map: goal highest, a diagonal band of good cells,
    unsafe cells only slightly worse than the band, two dark corners lowest."""
    rewards = np.zeros((side, side))
    span = max(2 * (side - 1), 1)
    for r in range(side):
        for c in range(side):
            val = 0.2 * (r + c) / span
            if abs(r - c) <= 1:
                val += 0.3
            rewards[r, c] = val
    for cell in unsafe:
        rewards[cell] -= 0.05
    if side > 2:
        rewards[0, side - 1] = rewards[side - 1, 0] = -0.5
    for cell in goal:
        rewards[cell] = 1.0
    return np.round(rewards, 6).tolist()


def default_unsafe(side: int) -> tuple[Cell, ...]:
    """Two barrier rows with gaps at opposite ends (a serpentine detour) for
    side >= 6; a central block on smaller grids."""
    if side >= 6:
        top, bottom = side // 4, side - 1 - side // 4
        cells = [(top, c) for c in range(side - 1)] + [(bottom, c) for c in range(1, side)]
    else:
        lo, hi = (side - 1) // 2, side // 2
        cells = [(r, c) for r in (lo, hi) for c in (lo, hi)]
    return tuple(sorted(set(cells)))


def default_grid_spec(side: int = 8, n_agents: int = 2) -> GridWorldSpec:
    """Init top-left, goal in the bottom-right corner. The straight route
    crosses the unsafe cells; avoiding them costs a long detour."""
    if side < 3:
        raise ModelError("default layout needs side >= 3")
    goal = ((side - 1, side - 2), (side - 1, side - 1))
    unsafe = default_unsafe(side)
    return GridWorldSpec(side=side, n_agents=n_agents, unsafe=unsafe, goal=goal, init=(0, 0),
                         rewards=default_rewards(side, unsafe, goal))


def single_agent_moves(spec: GridWorldSpec) -> np.ndarray:
    """Per-agent transition tensor M[cell, action, cell'] for one agent."""
    Q = spec.side * spec.side
    M = np.zeros((Q, N_GRID_ACTIONS, Q))
    p = spec.move_success_prob
    deltas = {STAY: (0, 0), LEFT: (0, -1), DOWN: (1, 0), RIGHT: (0, 1), UP: (-1, 0)}
    for r in range(spec.side):
        for c in range(spec.side):
            cell = r * spec.side + c
            for a, (dr, dc) in deltas.items():
                nr, nc = r + dr, c + dc
                if not (0 <= nr < spec.side and 0 <= nc < spec.side):
                    nr, nc = r, c
                target = nr * spec.side + nc
                success = p if a in (DOWN, UP) else 1.0
                M[cell, a, target] += success
                M[cell, a, cell] += 1.0 - success
    return M


def build_grid_world(spec: GridWorldSpec, discount: float = 0.99) -> MarkovGame:
    spec.validate()
    N, Q, K = spec.n_agents, spec.side * spec.side, N_GRID_ACTIONS
    M = single_agent_moves(spec)
    per_action = [sp.csr_matrix(M[:, a, :]) for a in range(K)]
    S, A = Q ** N, K ** N
    blocks = []
    for acts in decode_all(N, K):
        # agents move independently: joint kernel is the Kronecker product
        P = per_action[acts[0]]
        for i in range(1, N):
            P = sp.kron(P, per_action[acts[i]], format="csr")
        blocks.append(P)
    stacked = sp.vstack(blocks, format="csr")  # row a * S + s
    order = (np.arange(A)[None, :] * S + np.arange(S)[:, None]).ravel()
    T = stacked[order]  # row s * A + a

    state_digits = decode_all(N, Q)
    unsafe_cells = [spec.cell_index(c) for c in spec.unsafe]
    goal_cells = [spec.cell_index(c) for c in spec.goal]
    init_cell = spec.cell_index(spec.init)
    in_unsafe = np.isin(state_digits, unsafe_cells)
    in_goal = np.isin(state_digits, goal_cells)
    initial = encode([init_cell] * N, Q)
    labels = {
        "unsafe": frozenset(np.flatnonzero(in_unsafe.any(axis=1)).tolist()),
        "goal": frozenset(np.flatnonzero(in_goal.all(axis=1)).tolist()),
        "init": frozenset([initial]),
    }
    for i in range(N):
        labels[f"unsafe_{i}"] = frozenset(np.flatnonzero(in_unsafe[:, i]).tolist())
    return MarkovGame(N, Q, K, T, discount, initial, labels)


def joint_cell_rewards(spec: GridWorldSpec) -> np.ndarray:
    """Ground-truth joint reward: sum of the agents' per-cell rewards."""
    cells = decode_all(spec.n_agents, spec.side * spec.side)
    return spec.cell_rewards()[cells].sum(axis=1)


def per_agent_cell_grid(spec: GridWorldSpec, joint_values: np.ndarray, agent: int) -> np.ndarray:
    """Average a joint-state quantity over the other agents' positions -> side x side grid."""
    Q = spec.side * spec.side
    cells = decode_all(spec.n_agents, Q)[:, agent]
    sums = np.bincount(cells, weights=np.asarray(joint_values, float), minlength=Q)
    counts = np.bincount(cells, minlength=Q)
    return (sums / counts).reshape(spec.side, spec.side)
