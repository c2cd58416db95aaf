import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cegal.checker import unsafe_reach, verify
from cegal.expert import estimate_mu_E, expert_rule, generate_demos
from cegal.learner import (LearnerError, LearnerParams, apprenticeship_learning, cegal_run,
                           expected_return, initial_safe_rule, mu_distance)
from cegal.model import (DecisionRule, FeatureMap, build_grid_world, default_grid_spec,
                         game_from_tables, joint_cell_rewards)
from cegal.solve import feature_expectations_exact


def setup(side, n_agents, seed=0, m=200):
    spec = default_grid_spec(side, n_agents)
    game = build_grid_world(spec)
    r = joint_cell_rewards(spec)
    F = FeatureMap.one_hot(game.n_states)
    mu_E = estimate_mu_E(generate_demos(game, r, m=m, seed=seed), F, game.discount)
    return game, r, F, mu_E


# ---------------------------------------------------------------------------
# plain AL

def test_al_stops_when_expert_is_a_candidate():
    game, _, F, _ = setup(3, 1)
    rule = DecisionRule.uniform(game.n_states, game.n_actions)
    mu = feature_expectations_exact(game, rule, F)
    res = apprenticeship_learning(game, F, mu, epsilon=1e-6, initial_rule=rule)
    assert res.converged and res.deltas == [0.0] and res.rule is rule and res.weights is None


def test_al_gamma_zero():
    rng = np.random.default_rng(0)
    P = np.stack([np.eye(4)[rng.integers(0, 4, 4)] for _ in range(2)], axis=1)
    game = game_from_tables(P, 0.0)
    F = FeatureMap.one_hot(4)
    mu_E = np.array([0.5, 0.5, 0.0, 0.0])
    res = apprenticeship_learning(game, F, mu_E, epsilon=0.1, max_iter=3)
    # every rule sees only s0, so the margin is stuck at ||mu_E - e_0||
    assert not res.converged
    assert res.deltas == pytest.approx([np.linalg.norm(mu_E - [1, 0, 0, 0])] * 3)
    assert all(np.array_equal(c.mu, [1, 0, 0, 0]) for c in res.candidates)


def test_al_margins_decrease_to_epsilon():
    game, _, F, mu_E = setup(4, 1)
    res = apprenticeship_learning(game, F, mu_E, epsilon=1.0, max_iter=100)
    assert res.converged and res.deltas[-1] < 1.0
    assert all(b <= a + 1e-9 for a, b in zip(res.deltas, res.deltas[1:]))
    assert len(res.candidates) == len(res.deltas)


# ---------------------------------------------------------------------------
# counterexample-guided loop

def test_initial_rule_close_enough():
    game, _, F, _ = setup(3, 1)
    phi = unsafe_reach(0.25, 20)
    pi0 = initial_safe_rule(game, phi)
    mu0 = feature_expectations_exact(game, pi0, F)
    res = cegal_run(game, F, mu0, phi, LearnerParams(epsilon=1.0), pi0)
    assert res.terminated_by == "initial" and res.rule is pi0 and res.iterations == 0
    assert res.log[0]["event"] == "initial" and res.log[-1]["event"] == "return"


def test_bound_one_degenerates_to_al():
    game, _, F, mu_E = setup(4, 1)
    phi = unsafe_reach(1.0, 30)
    pi0 = DecisionRule.uniform(game.n_states, game.n_actions)
    res = cegal_run(game, F, mu_E, phi, LearnerParams(epsilon=1.0, max_iter=15), pi0)
    assert res.counterexamples == [] and res.cex_mus == []
    assert all(r["status"] == "Satisfy" for r in res.log if "status" in r)
    al = apprenticeship_learning(game, F, mu_E, epsilon=1e-9, max_iter=len(res.safe) - 1,
                                 initial_rule=pi0)
    for a, b in zip(res.safe, al.candidates):
        assert a.mu == pytest.approx(b.mu, abs=1e-9)


def test_unsafe_initial_rule_rejected():
    game, r, F, mu_E = setup(3, 1)
    phi = unsafe_reach(0.25, 50)
    bad = expert_rule(game, r)
    assert not verify(game, bad, phi).satisfied
    with pytest.raises(LearnerError):
        cegal_run(game, F, mu_E, phi, LearnerParams(), bad)


def test_initial_safe_rule_satisfies():
    game, *_ = setup(4, 2)
    phi = unsafe_reach(0.25, 60)
    assert verify(game, initial_safe_rule(game, phi), phi).satisfied


def check_run(game, r, F, mu_E, phi, params, pi0):
    res = cegal_run(game, F, mu_E, phi, params, pi0)
    its = [rec for rec in res.log if "status" in rec]
    infs = [rec["inf"] for rec in its]
    assert all(b >= a for a, b in zip(infs, infs[1:]))
    for rec in its:
        assert rec["inf"] <= rec["k"] <= 1.0
        assert (rec["status"] == "Satisfy") == (rec["probability"] <= phi.bound)
    for cand in res.safe:
        assert verify(game, cand.rule, phi).satisfied
    assert verify(game, res.rule, phi).satisfied
    assert len(res.counterexamples) == len(res.cex_mus)
    for cex in res.counterexamples:
        assert cex.total > phi.bound
    mu0 = feature_expectations_exact(game, pi0, F)
    if res.terminated_by != "max_iter":
        assert expected_return(r, res.mu) >= expected_return(r, mu0) - 1e-9
    assert res.log[-1]["terminated_by"] == res.terminated_by
    if res.terminated_by != "epsilon_close":
        # the returned rule is the closest safe candidate
        assert mu_distance(mu_E, res.mu) == pytest.approx(
            min(mu_distance(mu_E, c.mu) for c in res.safe))
    return res


def test_cegal_both_branches():
    game, r, F, mu_E = setup(5, 1, seed=0)
    phi = unsafe_reach(0.2, 50)
    res = check_run(game, r, F, mu_E, phi, LearnerParams(epsilon=0.5, max_iter=60),
                    initial_safe_rule(game, phi))
    statuses = {rec["status"] for rec in res.log if "status" in rec}
    assert statuses == {"Satisfy", "Unsatisfy"}


def test_cegal_max_iter_is_flagged():
    game, r, F, mu_E = setup(4, 1, seed=0)
    phi = unsafe_reach(0.1, 30)
    res = check_run(game, r, F, mu_E, phi, LearnerParams(epsilon=0.5, max_iter=5),
                    initial_safe_rule(game, phi))
    assert res.terminated_by == "max_iter" and res.iterations == 5


@given(side=st.integers(3, 5), seed=st.integers(0, 50), bound=st.sampled_from([0.1, 0.25, 0.5]))
@settings(max_examples=12)
def test_cegal_invariants(side, seed, bound):
    game, r, F, mu_E = setup(side, 1, seed=seed, m=50)
    phi = unsafe_reach(bound, 40)
    check_run(game, r, F, mu_E, phi, LearnerParams(epsilon=0.5, max_iter=30),
              initial_safe_rule(game, phi))


def test_cegal_two_agents_small():
    game, r, F, mu_E = setup(3, 2, seed=1)
    phi = unsafe_reach(0.25, 50)
    check_run(game, r, F, mu_E, phi, LearnerParams(epsilon=0.5, max_iter=30),
              initial_safe_rule(game, phi))


def test_callback_sees_every_record():
    game, r, F, mu_E = setup(4, 1)
    phi = unsafe_reach(0.25, 30)
    seen = []
    res = cegal_run(game, F, mu_E, phi, LearnerParams(epsilon=0.5, max_iter=10),
                    initial_safe_rule(game, phi), callback=seen.append)
    assert seen == res.log


def test_requires_probability_formula():
    game, r, F, mu_E = setup(3, 1)
    with pytest.raises(LearnerError):
        cegal_run(game, F, mu_E, unsafe_reach(0.2, 5).path, LearnerParams(),
                  DecisionRule.uniform(game.n_states, game.n_actions))
