"""Labelled DTMCs induced by fixing a decision rule, plus explicit-format I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .model import ROW_TOL, DecisionRule, MarkovGame, ModelError

DROP_BELOW = 1e-15


@dataclass(frozen=True, eq=False)
class Dtmc:
    P: sp.csr_matrix
    labels: Mapping[str, frozenset] = field(default_factory=dict)
    initial_state: int = 0

    def __post_init__(self):
        P = sp.csr_matrix(self.P, dtype=float)
        P.sort_indices()
        n = P.shape[0]
        if P.shape != (n, n):
            raise ModelError(f"transition matrix must be square, got {P.shape}")
        if P.nnz and (P.data.min() < 0 or P.data.max() > 1):
            raise ModelError("probabilities outside [0, 1]")
        sums = np.asarray(P.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
        if bad.size:
            raise ModelError(f"row {int(bad[0])} is not stochastic (sum {sums[bad[0]]!r})")
        if not 0 <= self.initial_state < max(n, 1):
            raise ModelError("initial state out of range")
        labels = {k: frozenset(int(s) for s in v) for k, v in self.labels.items()}
        for name, states in labels.items():
            if any(not 0 <= s < n for s in states):
                raise ModelError(f"label {name!r} names an invalid state")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "labels", labels)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_transitions(self) -> int:
        return self.P.nnz

    def successors(self, s: int) -> list[tuple[int, float]]:
        lo, hi = self.P.indptr[s], self.P.indptr[s + 1]
        return list(zip(self.P.indices[lo:hi].tolist(), self.P.data[lo:hi].tolist()))

    def label_mask(self, name: str) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.labels[name])] = True
        return mask

    def same_as(self, other: "Dtmc") -> bool:
        """Exact equality of structure, probabilities and labels."""
        a, b = self.P, other.P
        return (a.shape == b.shape and np.array_equal(a.indptr, b.indptr)
                and np.array_equal(a.indices, b.indices) and np.array_equal(a.data, b.data)
                and dict(self.labels) == dict(other.labels)
                and self.initial_state == other.initial_state)


def _clean(P: sp.csr_matrix) -> sp.csr_matrix:
    P = sp.csr_matrix(P)
    P.data[P.data < DROP_BELOW] = 0.0
    P.eliminate_zeros()
    sums = np.asarray(P.sum(axis=1)).ravel()
    P = sp.csr_matrix(sp.diags(1.0 / sums) @ P)
    P.sort_indices()
    return P


def induce_dtmc(game: MarkovGame, rule: DecisionRule) -> Dtmc:
    """P_rule(s, s') = sum_a rule(a | s) P(s' | s, a)."""
    S, A = game.n_states, game.n_actions
    if rule.probs.shape != (S, A):
        raise ModelError(f"rule shape {rule.probs.shape} does not match game {(S, A)}")
    weights = sp.csr_matrix(
        (rule.probs.ravel(), np.arange(S * A), np.arange(0, S * A + 1, A)), shape=(S, S * A))
    P = _clean(weights @ game.transition)
    return Dtmc(P, game.labels, game.initial_state)


def make_absorbing(dtmc: Dtmc, states: Iterable[int]) -> Dtmc:
    states = sorted({int(s) for s in states})
    if not states:
        return dtmc
    n = dtmc.n_states
    if states[0] < 0 or states[-1] >= n:
        raise ModelError("state index out of range")
    keep = np.ones(n)
    keep[states] = 0.0
    loops = np.zeros(n)
    loops[states] = 1.0
    P = sp.diags(keep) @ dtmc.P + sp.diags(loops)
    P = sp.csr_matrix(P)
    P.eliminate_zeros()
    return Dtmc(P, dtmc.labels, dtmc.initial_state)


# ---------------------------------------------------------------------------
# explicit-state text format

def export_explicit(dtmc: Dtmc) -> tuple[str, str]:
    """Return (transitions text, labels text).

    Transitions: header ``n m`` then ``src dst prob`` lines sorted by (src, dst),
    probabilities with 17 significant digits. Labels: header of ``idx="name"``
    pairs (names sorted) then ``state: idx idx ...`` for every labelled state.
    """
    P = dtmc.P
    lines = [f"{dtmc.n_states} {P.nnz}"]
    for s in range(dtmc.n_states):
        lo, hi = P.indptr[s], P.indptr[s + 1]
        for t, p in zip(P.indices[lo:hi], P.data[lo:hi]):
            lines.append(f"{s} {t} {p:.17g}")
    trans = "\n".join(lines)

    names = sorted(dtmc.labels)
    header = " ".join(f'{i}="{name}"' for i, name in enumerate(names))
    per_state: dict[int, list[int]] = {}
    for i, name in enumerate(names):
        for s in dtmc.labels[name]:
            per_state.setdefault(s, []).append(i)
    label_lines = [header]
    for s in sorted(per_state):
        label_lines.append(f"{s}: " + " ".join(map(str, per_state[s])))
    return trans, "\n".join(label_lines)


def parse_explicit(trans_text: str, labels_text: str = "", initial_state: int | None = None) -> Dtmc:
    """Inverse of :func:`export_explicit`. The initial state defaults to the
    state carrying the ``init`` label, else 0."""
    rows = [ln.split() for ln in trans_text.strip().splitlines() if ln.strip()]
    n, m = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != m:
        raise ModelError(f"header announces {m} transitions, found {len(body)}")
    src = np.array([int(r[0]) for r in body], dtype=np.int64)
    dst = np.array([int(r[1]) for r in body], dtype=np.int64)
    prob = np.array([float(r[2]) for r in body])
    P = sp.csr_matrix((prob, (src, dst)), shape=(n, n))

    labels: dict[str, set] = {}
    lines = labels_text.splitlines()
    if lines:
        names = {}
        for tok in lines[0].split():
            idx, name = tok.split("=", 1)
            names[int(idx)] = name.strip('"')
            labels[name.strip('"')] = set()
        for ln in lines[1:]:
            if not ln.strip():
                continue
            state, rest = ln.split(":", 1)
            for idx in rest.split():
                labels[names[int(idx)]].add(int(state))
    if initial_state is None:
        init = labels.get("init")
        initial_state = min(init) if init else 0
    return Dtmc(P, labels, initial_state)
