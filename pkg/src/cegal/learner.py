"""Apprenticeship learning with and without counterexample guidance."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cex import (Counterexample, CounterexampleTruncated, NoCounterexample,
                  counterexample_features, counterexample_for)
from .checker import ProbOp, StateFormula, check_dtmc, sat_mask
from .dtmc import induce_dtmc
from .margin import HullSum, max_margin
from .model import DecisionRule, FeatureMap, MarkovGame, reward_from_weights
from .solve import feature_expectations_exact, value_iteration

log = logging.getLogger(__name__)


class LearnerError(RuntimeError):
    pass


@dataclass
class LearnerParams:
    epsilon: float = 10.0
    sigma: float = 1e-5
    alpha: float = 0.5
    max_iter: int = 200
    k_max: int = 5000
    depth_cap: int | None = None


@dataclass
class Candidate:
    rule: DecisionRule
    mu: np.ndarray


# ---------------------------------------------------------------------------
# weight search

def max_margin_weights(mu_E, mus: Sequence) -> tuple[np.ndarray, float]:
    """w (||w|| <= 1) maximising min_i w.(mu_E - mu_i), and that margin."""
    if len(mus) == 0:
        raise ValueError("need at least one candidate feature expectation")
    mu_E = np.asarray(mu_E, dtype=float)
    return max_margin(HullSum(mu_E, [(-1.0, np.asarray(mus, dtype=float))]))


def combined_hull(mu_E, safe_mus: Sequence, cex_mus: Sequence, k: float) -> HullSum:
    """All k (mu_E - mu_a) + (1 - k)(mu_b - mu_c) for a, b safe and c a counterexample."""
    mu_E = np.asarray(mu_E, dtype=float)
    S = np.asarray(safe_mus, dtype=float)
    if len(cex_mus) == 0:
        return HullSum(mu_E, [(-1.0, S)])
    C = np.asarray(cex_mus, dtype=float)
    return HullSum(k * mu_E, [(-k, S), (1.0 - k, S), (-(1.0 - k), C)])


def combined_weight_update(mu_E, safe_mus: Sequence, cex_mus: Sequence, k: float,
                           return_margin: bool = False):
    if len(safe_mus) == 0:
        raise ValueError("the safe candidate set is empty")
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"k={k} outside [0, 1]")
    w, delta = max_margin(combined_hull(mu_E, safe_mus, cex_mus, k))
    return (w, delta) if return_margin else w


def learn_rule(game: MarkovGame, features: FeatureMap, w) -> Candidate:
    rule, _ = value_iteration(game, reward_from_weights(game, features, w))
    return Candidate(rule, feature_expectations_exact(game, rule, features))


# ---------------------------------------------------------------------------
# plain apprenticeship learning

@dataclass
class ALStep:
    delta: float
    weights: np.ndarray
    done: bool
    added: Candidate | None = None


def al_step(game: MarkovGame, features: FeatureMap, mu_E, candidates: list[Candidate],
            epsilon: float) -> ALStep:
    """One max-margin round: stop if delta < epsilon, else add the optimal rule for w."""
    if not candidates:
        raise LearnerError("al_step needs at least one candidate")
    w, delta = max_margin_weights(mu_E, [c.mu for c in candidates])
    if delta < epsilon:
        return ALStep(delta, w, True)
    cand = learn_rule(game, features, w)
    candidates.append(cand)
    return ALStep(delta, w, False, cand)


@dataclass
class ALResult:
    rule: DecisionRule
    mu: np.ndarray
    candidates: list[Candidate]
    deltas: list[float]
    converged: bool
    weights: np.ndarray | None = None


def apprenticeship_learning(game: MarkovGame, features: FeatureMap, mu_E, epsilon: float = 10.0,
                            max_iter: int = 200, initial_rule: DecisionRule | None = None) -> ALResult:
    """Max-margin apprenticeship learning; returns the most recent rule once
    the margin falls below epsilon."""
    if initial_rule is None:
        initial_rule = DecisionRule.uniform(game.n_states, game.n_actions)
    candidates = [Candidate(initial_rule, feature_expectations_exact(game, initial_rule, features))]
    deltas = []
    weights = None
    for _ in range(max_iter):
        step = al_step(game, features, mu_E, candidates, epsilon)
        deltas.append(step.delta)
        log.debug("AL iteration %d: delta=%.6g", len(deltas), step.delta)
        if step.done:
            last = candidates[-1]
            return ALResult(last.rule, last.mu, candidates, deltas, True, weights)
        weights = step.weights
    last = candidates[-1]
    return ALResult(last.rule, last.mu, candidates, deltas, False, weights)


# ---------------------------------------------------------------------------
# counterexample-guided loop

def initial_safe_rule(game: MarkovGame, phi: ProbOp, goal_label: str = "goal",
                      penalties: Sequence[float] = (1.0, 10.0, 100.0, 1000.0)) -> DecisionRule:
    """Optimal rule for +1 on goal states and -c on the formula's target
    states, escalating c until the checker accepts the rule."""
    probe = induce_dtmc(game, DecisionRule.uniform(game.n_states, game.n_actions))
    bad = sat_mask(probe, phi.path.right).astype(float)
    good = probe.label_mask(goal_label).astype(float) if goal_label in probe.labels else 0.0
    for c in penalties:
        rule, _ = value_iteration(game, good - c * bad)
        if check_dtmc(induce_dtmc(game, rule), phi).satisfied:
            return rule
    raise LearnerError("no penalty level produced a rule satisfying the specification")


@dataclass
class CegalResult:
    rule: DecisionRule
    mu: np.ndarray
    log: list[dict]
    terminated_by: str          # initial | epsilon_close | k_converged | max_iter
    safe: list[Candidate] = field(default_factory=list)
    cex_mus: list[np.ndarray] = field(default_factory=list)
    counterexamples: list[Counterexample] = field(default_factory=list)
    weights: np.ndarray | None = None    # last weight vector computed

    @property
    def iterations(self) -> int:
        return sum(1 for r in self.log if "status" in r)


def _counterexample(dtmc, phi, params: LearnerParams) -> tuple[Counterexample | None, str]:
    try:
        return counterexample_for(dtmc, phi, k_max=params.k_max, depth_cap=params.depth_cap), "full"
    except CounterexampleTruncated as exc:
        part = exc.partial
        return (part if part.evidences else None), "truncated"
    except NoCounterexample:
        return None, "none"


def cegal_run(game: MarkovGame, features: FeatureMap, mu_E, phi: StateFormula,
              params: LearnerParams, initial_rule: DecisionRule,
              callback: Callable[[dict], None] | None = None) -> CegalResult:
    """Verifier/learner loop with the adaptive weight k in [inf, sup]."""
    if not isinstance(phi, ProbOp):
        raise LearnerError("the specification must be a probability formula")
    mu_E = np.asarray(mu_E, dtype=float)
    records: list[dict] = []

    def emit(rec):
        records.append(rec)
        if callback:
            callback(rec)

    def dist(mu):
        return float(np.linalg.norm(mu_E - mu))

    dtmc0 = induce_dtmc(game, initial_rule)
    v0 = check_dtmc(dtmc0, phi)
    if not v0.satisfied:
        raise LearnerError(f"initial rule violates the specification ({v0})")
    mu0 = feature_expectations_exact(game, initial_rule, features)
    emit({"iteration": 0, "event": "initial", "probability": v0.probability, "distance": dist(mu0)})
    safe = [Candidate(initial_rule, mu0)]
    cex_mus: list[np.ndarray] = []
    cexs: list[Counterexample] = []
    w = None

    def best_safe():
        return min(safe, key=lambda c: dist(c.mu))

    def finish(cand, how):
        emit({"event": "return", "terminated_by": how, "distance": dist(cand.mu)})
        return CegalResult(cand.rule, cand.mu, records, how, safe, cex_mus, cexs, w)

    if dist(mu0) <= params.epsilon:
        return finish(safe[0], "initial")

    inf, sup = 0.0, 1.0
    k = sup
    w, delta = combined_weight_update(mu_E, [c.mu for c in safe], cex_mus, k, return_margin=True)
    current = learn_rule(game, features, w)

    for i in range(1, params.max_iter + 1):
        t0 = time.perf_counter()
        dtmc = induce_dtmc(game, current.rule)
        verdict = check_dtmc(dtmc, phi)
        rec = {"iteration": i, "status": verdict.status, "probability": verdict.probability,
               "distance": dist(current.mu), "k_used": k, "delta": delta}
        if verdict.satisfied:
            if dist(current.mu) <= params.epsilon:
                safe.append(current)
                rec.update(inf=inf, k=k, seconds=time.perf_counter() - t0)
                emit(rec)
                return finish(current, "epsilon_close")
            safe.append(current)
            inf, k = k, sup
        else:
            cex, quality = _counterexample(dtmc, phi, params)
            rec["cex"] = quality
            if cex is not None:
                cexs.append(cex)
                cex_mus.append(counterexample_features(cex, features, game.discount))
                rec.update(cex_size=len(cex), cex_total=cex.total)
            if abs(k - inf) <= params.sigma:
                rec.update(inf=inf, k=k, seconds=time.perf_counter() - t0)
                emit(rec)
                return finish(best_safe(), "k_converged")
            k = params.alpha * inf + (1.0 - params.alpha) * k
        w, delta = combined_weight_update(mu_E, [c.mu for c in safe], cex_mus, k, return_margin=True)
        current = learn_rule(game, features, w)
        rec.update(inf=inf, k=k, n_safe=len(safe), n_cex=len(cex_mus),
                   seconds=time.perf_counter() - t0)
        emit(rec)
        log.info("iteration %d: %s p=%.4g dist=%.4g k=%.6g", i, verdict.status,
                 verdict.probability, rec["distance"], k)
    return finish(best_safe(), "max_iter")


def expected_return(weights, mu) -> float:
    return float(np.dot(weights, mu))


def mu_distance(mu_E, mu) -> float:
    return float(math.dist(np.ravel(mu_E), np.ravel(mu)))
