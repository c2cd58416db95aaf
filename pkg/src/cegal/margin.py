"""Max-margin weight search.

max_{||w|| <= 1} min_{v in V} w.v equals the distance from the origin to
conv(V) (zero when the hull contains the origin), attained at w = x*/||x*||
with x* the hull's minimum-norm point. The candidate sets used by the learner
are Minkowski sums  c0 + sum_b coef_b * conv(rows of M_b),  so hulls are
handled through a linear minimisation oracle and never enumerated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ZERO_NORM = 1e-12


class HullSum:
    """c0 + sum_b coef_b * conv(rows of mats[b])."""

    def __init__(self, offset, blocks: Sequence[tuple[float, np.ndarray]]):
        self.offset = np.asarray(offset, dtype=float).ravel()
        self.blocks = [(float(c), np.atleast_2d(np.asarray(M, dtype=float)))
                       for c, M in blocks if c != 0.0 and np.size(M)]
        for _, M in self.blocks:
            if M.shape[1] != self.offset.size:
                raise ValueError("block dimension mismatch")

    @property
    def dim(self) -> int:
        return self.offset.size

    def vertex(self, key: tuple[int, ...]) -> np.ndarray:
        v = self.offset.copy()
        for (c, M), j in zip(self.blocks, key):
            v += c * M[j]
        return v

    def lmo(self, direction: np.ndarray) -> tuple[tuple[int, ...], np.ndarray]:
        """Vertex minimising direction . v (first index on ties)."""
        key = tuple(int(np.argmin(c * (M @ direction))) for c, M in self.blocks)
        return key, self.vertex(key)

    def vertices(self) -> np.ndarray:
        """All sums of block rows; only for small test instances."""
        keys = np.array(np.meshgrid(*[np.arange(M.shape[0]) for _, M in self.blocks],
                                    indexing="ij")).reshape(len(self.blocks), -1).T
        if not self.blocks:
            return self.offset[None, :]
        return np.array([self.vertex(tuple(k)) for k in keys])


def points_hull(points) -> HullSum:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return HullSum(np.zeros(P.shape[1]), [(1.0, P)])


def _affine_minimizer(Y: np.ndarray) -> np.ndarray:
    """alpha with sum(alpha) = 1 minimising ||alpha @ Y||."""
    k = Y.shape[0]
    if k == 1:
        return np.ones(1)
    # shift to the first point for conditioning
    D = Y[1:] - Y[0]
    G = D @ D.T
    b = -(D @ Y[0])
    beta, *_ = np.linalg.lstsq(G, b, rcond=None)
    return np.concatenate([[1.0 - beta.sum()], beta])


@dataclass
class MinNormResult:
    point: np.ndarray
    norm: float
    weights: dict          # vertex key -> convex weight
    iterations: int
    gap: float


def min_norm_point(hull: HullSum, tol: float = 1e-15, max_iter: int = 10_000) -> MinNormResult:
    """Wolfe's minimum-norm-point algorithm (major/minor cycles over a corral).

    Terminates when ||x||^2 - min_v x.v <= tol * scale, scale being the
    largest squared vertex norm seen."""
    key, q = hull.lmo(np.zeros(hull.dim))
    keys, Y = [key], q[None, :]
    lam = np.ones(1)
    x = q.copy()
    scale = max(float(q @ q), 1e-300)
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        key, q = hull.lmo(x)
        scale = max(scale, float(q @ q))
        gap = float(x @ x - x @ q)
        if gap <= tol * scale or key in keys:
            break
        keys.append(key)
        Y = np.vstack([Y, q])
        lam = np.append(lam, 0.0)
        while True:
            alpha = _affine_minimizer(Y)
            if np.all(alpha > 0):
                lam = alpha
                break
            neg = alpha <= 0
            theta = np.min(lam[neg] / (lam[neg] - alpha[neg]))
            lam = theta * alpha + (1.0 - theta) * lam
            lam[neg & (lam <= 1e-14)] = 0.0
            keep = lam > 0
            if keep.all():
                # numerical stall: drop the smallest weight
                keep[np.argmin(lam)] = False
            keys = [k for k, kp in zip(keys, keep) if kp]
            Y, lam = Y[keep], lam[keep]
            lam /= lam.sum()
        x = lam @ Y
        if float(x @ x) <= ZERO_NORM ** 2 * scale:
            break
    return MinNormResult(x, float(np.linalg.norm(x)), dict(zip(keys, lam.tolist())), it, gap)


def max_margin(hull: HullSum) -> tuple[np.ndarray, float]:
    """(w, delta) for max_{||w||<=1} min_{v in hull} w.v; w = 0 when delta = 0."""
    res = min_norm_point(hull)
    scale = max(np.abs(hull.offset).max(initial=0.0),
                max((abs(c) * np.abs(M).max() for c, M in hull.blocks), default=0.0), 1.0)
    if res.norm <= 1e-10 * scale:
        return np.zeros(hull.dim), 0.0
    w = res.point / res.norm
    return w, res.norm


def margin_of(w: np.ndarray, hull: HullSum) -> float:
    """min over the hull of w.v (attained at a vertex)."""
    _, q = hull.lmo(w)
    return float(w @ q)


# ---------------------------------------------------------------------------
# independent certificate

@dataclass
class HullDistance:
    distance: float       # ||x|| for the final iterate (upper bound)
    lower: float          # duality lower bound on the distance
    point: np.ndarray
    iterations: int


def frank_wolfe_distance(hull: HullSum, tol: float = 1e-14, max_iter: int = 200_000) -> HullDistance:
    """Distance from the origin to the hull by pairwise Frank-Wolfe.

    Keeps an explicit convex combination of vertices; each step moves weight
    from the worst active vertex to the LMO vertex with exact line search."""
    key, q = hull.lmo(np.zeros(hull.dim))
    active = {key: 1.0}
    verts = {key: q}
    x = q.copy()
    lower = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        s_key, s = hull.lmo(x)
        verts.setdefault(s_key, s)
        xx = float(x @ x)
        gap = xx - float(x @ s)
        nx = np.sqrt(xx)
        if nx > 0:
            lower = max(lower, float(x @ s) / nx)
        if gap <= tol * max(1.0, xx):
            break
        a_key = max(active, key=lambda k: float(x @ verts[k]))
        d = s - verts[a_key]
        dd = float(d @ d)
        if dd == 0.0:
            break
        step = min(max(-float(x @ d) / dd, 0.0), active[a_key])
        x = x + step * d
        active[s_key] = active.get(s_key, 0.0) + step
        active[a_key] -= step
        if active[a_key] <= 1e-16:
            del active[a_key]
    return HullDistance(float(np.linalg.norm(x)), max(lower, 0.0), x, it)


def grid_search_margin(vectors, n_grid: int = 10_000) -> tuple[np.ndarray, float]:
    """Brute-force 2-D oracle: scan unit vectors at n_grid angles (and w = 0)."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    theta = np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False)
    W = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    margins = (W @ V.T).min(axis=1)
    i = int(np.argmax(margins))
    if margins[i] <= 0:
        return np.zeros(2), 0.0
    return W[i], float(margins[i])
