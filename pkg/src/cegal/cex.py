"""Strongest evidences and smallest counterexamples for P<=p [ phi1 U<=h phi2 ].

Paths are searched on the DTMC's log-weighted digraph, w(u, v) = log(1 / P(u, v)),
so the most probable paths are the shortest ones. Targets (phi2) and dead states
(neither phi1 nor phi2) end a path; a path that reaches a target stops there,
which makes every emitted path minimally satisfying.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .checker import BoundedUntil, ProbOp, StateFormula, Until, sat_mask
from .dtmc import Dtmc
from .model import FeatureMap

DEFAULT_K_MAX = 5000
DEFAULT_EXPANSION_CAP = 2_000_000
# Inflation on the A* bound so rounding in long products never reorders output.
_HEURISTIC_SLACK = 1e-9


class CexError(RuntimeError):
    pass


class NoCounterexample(CexError):
    def __init__(self, msg, total=0.0):
        super().__init__(msg)
        self.total = total


class CounterexampleTruncated(CexError):
    def __init__(self, msg, partial: "Counterexample"):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class Evidence:
    path: tuple[int, ...]
    probability: float

    @property
    def hops(self) -> int:
        return len(self.path) - 1


@dataclass
class Counterexample:
    evidences: list[Evidence]
    bound: float
    formula: str = ""
    total: float = field(init=False)

    def __post_init__(self):
        self.total = math.fsum(e.probability for e in self.evidences)

    def __len__(self):
        return len(self.evidences)

    def to_json(self) -> dict:
        return {
            "paths": [{"path": list(e.path), "prob": e.probability} for e in self.evidences],
            "total": self.total,
            "bound": self.bound,
            "formula": self.formula,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, doc) -> "Counterexample":
        ev = [Evidence(tuple(int(s) for s in p["path"]), float(p["prob"])) for p in doc["paths"]]
        return cls(ev, float(doc["bound"]), doc.get("formula", ""))


# ---------------------------------------------------------------------------

def weighted_digraph(dtmc: Dtmc) -> sp.csr_matrix:
    """Edge weights log(1/P) on the nonzero transitions (explicit zeros kept)."""
    P = dtmc.P
    W = sp.csr_matrix((-np.log(P.data), P.indices.copy(), P.indptr.copy()), shape=P.shape)
    return W


def path_weight(W: sp.csr_matrix, path: Sequence[int]) -> float:
    total = 0.0
    for u, v in zip(path[:-1], path[1:]):
        lo, hi = W.indptr[u], W.indptr[u + 1]
        pos = np.searchsorted(W.indices[lo:hi], v)
        if pos >= hi - lo or W.indices[lo + pos] != v:
            return math.inf
        total += W.data[lo + pos]
    return total


def path_probability_of(dtmc: Dtmc, path: Sequence[int]) -> float:
    prob = 1.0
    for u, v in zip(path[:-1], path[1:]):
        prob *= float(dtmc.P[u, v])
    return prob


def _as_mask(states, n: int) -> np.ndarray:
    if isinstance(states, np.ndarray) and states.dtype == bool:
        if states.shape != (n,):
            raise ValueError("mask has the wrong length")
        return states
    mask = np.zeros(n, dtype=bool)
    mask[list(states)] = True
    return mask


class _SearchGraph:
    """Pruned successor lists plus the data the A* bound needs."""

    def __init__(self, dtmc: Dtmc, phi1, phi2):
        n = dtmc.n_states
        self.dtmc = dtmc
        self.target = _as_mask(phi2, n)
        left = _as_mask(phi1, n)
        P = dtmc.P
        diag = P.diagonal()
        # absorbing non-targets can never extend a minimally-satisfying path
        self.extendable = left & ~self.target & ~(diag == 1.0)
        self.succ: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for s in np.flatnonzero(self.extendable):
            lo, hi = P.indptr[s], P.indptr[s + 1]
            for t, p in zip(P.indices[lo:hi].tolist(), P.data[lo:hi].tolist()):
                if self.target[t] or self.extendable[t]:
                    self.succ[s].append((t, p))
        self._bounds()

    def _bounds(self):
        """best[s]: max probability to reach a target (any hops);
        hops_left[s]: fewest hops to a target."""
        n = self.dtmc.n_states
        pred: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for s, lst in enumerate(self.succ):
            for t, p in lst:
                pred[t].append((s, p))
        best = np.zeros(n)
        best[self.target] = 1.0
        heap = [(-1.0, int(s)) for s in np.flatnonzero(self.target)]
        done = np.zeros(n, dtype=bool)
        while heap:
            negp, v = heapq.heappop(heap)
            if done[v]:
                continue
            done[v] = True
            for u, p in pred[v]:
                cand = -negp * p
                if cand > best[u]:
                    best[u] = cand
                    heapq.heappush(heap, (-cand, u))
        self.best = best

        # half the int64 range so depth + hops_left cannot wrap around
        hops = np.full(n, np.iinfo(np.int64).max // 2, dtype=np.int64)
        frontier = list(np.flatnonzero(self.target))
        hops[frontier] = 0
        d = 0
        while frontier:
            d += 1
            nxt = []
            for v in frontier:
                for u, _ in pred[v]:
                    if hops[u] > d:
                        hops[u] = d
                        nxt.append(u)
            frontier = nxt
        self.hops_left = hops


def enumerate_evidences(dtmc: Dtmc, phi1, phi2, hops: int, start: int | None = None,
                        expansion_cap: int = DEFAULT_EXPANSION_CAP) -> Iterator[Evidence]:
    """Yield minimally-satisfying paths of <= ``hops`` hops from ``start`` in
    nonincreasing probability order; equal probabilities in lexicographic
    order of the state sequence.

    Best-first search over path prefixes keyed by prefix probability times the
    best possible completion, i.e. A* on the log-weighted digraph with an exact
    (consistent) bound, which makes this a lazy hop-constrained k-SP."""
    g = _SearchGraph(dtmc, phi1, phi2)
    s0 = dtmc.initial_state if start is None else int(start)
    if g.target[s0]:
        yield Evidence((s0,), 1.0)
        return
    if not g.extendable[s0] or g.best[s0] == 0.0 or g.hops_left[s0] > hops:
        return
    best, hops_left, target, succ = g.best, g.hops_left, g.target, g.succ
    scale = 1.0 + _HEURISTIC_SLACK
    # (negated key, path, prob, complete)
    heap = [(-best[s0] * scale, (s0,), 1.0, False)]
    expansions = 0
    while heap:
        _, path, prob, complete = heapq.heappop(heap)
        if complete:
            yield Evidence(path, prob)
            continue
        expansions += 1
        if expansions > expansion_cap:
            raise CexError(f"path search exceeded {expansion_cap} expansions")
        depth = len(path) - 1
        for t, p in succ[path[-1]]:
            q = prob * p
            if target[t]:
                heapq.heappush(heap, (-q, path + (t,), q, True))
            elif best[t] > 0.0 and depth + 1 + hops_left[t] <= hops:
                heapq.heappush(heap, (-q * best[t] * scale, path + (t,), q, False))


def strongest_evidence(dtmc: Dtmc, phi1, phi2, hops: int, start: int | None = None) -> Evidence | None:
    """Most probable minimally-satisfying path within ``hops`` hops (Viterbi
    over (state, hop)); None when no such path exists. O(hops * m)."""
    n = dtmc.n_states
    target = _as_mask(phi2, n)
    left = _as_mask(phi1, n)
    s0 = dtmc.initial_state if start is None else int(start)
    if target[s0]:
        return Evidence((s0,), 1.0)
    extendable = left & ~target & ~(dtmc.P.diagonal() == 1.0)
    if not extendable[s0]:
        return None
    P = dtmc.P.tocoo()
    keep = extendable[P.row] & (extendable[P.col] | target[P.col])
    src, dst, pr = P.row[keep], P.col[keep], P.data[keep]
    order = np.lexsort((src, dst))  # group by destination
    src, dst, pr = src[order], dst[order], pr[order]

    v = np.zeros(n)
    v[s0] = 1.0
    best_prob, best_end, best_k = 0.0, -1, -1
    backptr: list[np.ndarray] = []
    for k in range(1, hops + 1):
        vals = v[src] * pr
        nxt = np.zeros(n)
        arg = np.full(n, -1, dtype=np.int64)
        if vals.size:
            # per-destination argmax; ties resolved to the smaller predecessor
            best_by_dst = np.zeros(n)
            np.maximum.at(best_by_dst, dst, vals)
            hit = (vals == best_by_dst[dst]) & (vals > 0)
            cand_dst, cand_src = dst[hit], src[hit]
            first = np.ones(cand_dst.size, dtype=bool)
            first[1:] = cand_dst[1:] != cand_dst[:-1]
            nxt[cand_dst[first]] = best_by_dst[cand_dst[first]]
            arg[cand_dst[first]] = cand_src[first]
        backptr.append(arg)
        reached = np.flatnonzero(target & (nxt > 0))
        if reached.size:
            j = reached[np.argmax(nxt[reached])]
            if nxt[j] > best_prob:
                best_prob, best_end, best_k = float(nxt[j]), int(j), k
        v = np.where(extendable, nxt, 0.0)
        if v.max(initial=0.0) <= best_prob:
            break
    if best_end < 0:
        return None
    path = [best_end]
    for k in range(best_k, 0, -1):
        path.append(int(backptr[k - 1][path[-1]]))
    path.reverse()
    return Evidence(tuple(path), path_probability_of(dtmc, path))


def smallest_counterexample(dtmc: Dtmc, phi1, phi2, hops: int, bound: float,
                            k_max: int = DEFAULT_K_MAX, depth_cap: int | None = None,
                            start: int | None = None, formula: str = "") -> Counterexample:
    """Fewest most-probable evidences whose total probability exceeds ``bound``.

    Raises NoCounterexample when the evidences within the (capped) hop bound
    never exceed it, CounterexampleTruncated after ``k_max`` paths."""
    if depth_cap is None:
        depth_cap = 4 * dtmc.n_states
    limit = min(hops, depth_cap)
    chosen: list[Evidence] = []
    total = 0.0
    try:
        for ev in enumerate_evidences(dtmc, phi1, phi2, limit, start):
            chosen.append(ev)
            total += ev.probability
            if total > bound:
                return Counterexample(chosen, bound, formula)
            if len(chosen) >= k_max:
                raise CounterexampleTruncated(
                    f"stopped after k_max={k_max} paths with total {total!r} <= {bound}",
                    Counterexample(chosen, bound, formula))
    except CexError as exc:
        if isinstance(exc, CounterexampleTruncated):
            raise
        raise CounterexampleTruncated(str(exc), Counterexample(chosen, bound, formula)) from exc
    raise NoCounterexample(f"all evidences sum to {total!r} <= {bound}", total)


def counterexample_for(dtmc: Dtmc, phi: StateFormula, **kwargs) -> Counterexample:
    """Counterexample for a top-level P<=p [ a U<=h b ] (or unbounded U)."""
    if not isinstance(phi, ProbOp) or not isinstance(phi.path, (BoundedUntil, Until)):
        raise CexError("counterexamples need P<=p [ phi1 U phi2 ] formulas")
    path = phi.path
    hops = path.hops if isinstance(path, BoundedUntil) else 4 * dtmc.n_states
    left, right = sat_mask(dtmc, path.left), sat_mask(dtmc, path.right)
    return smallest_counterexample(dtmc, left, right, hops, phi.bound, formula=str(phi), **kwargs)


def counterexample_features(cex: Counterexample, features: FeatureMap, discount: float) -> np.ndarray:
    """sum over evidences of Pr(path)/Pr(cex) * sum_t discount^t f(path[t])."""
    if not cex.evidences:
        raise CexError("empty counterexample")
    coeff = np.zeros(features.n_states)
    for ev in cex.evidences:
        share = ev.probability / cex.total
        np.add.at(coeff, list(ev.path), share * discount ** np.arange(len(ev.path)))
    return features.weighted_sum(coeff)


def collect(evidences: Iterable[Evidence], k: int) -> list[Evidence]:
    out = []
    for ev in evidences:
        out.append(ev)
        if len(out) >= k:
            break
    return out
