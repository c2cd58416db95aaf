import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cegal.learner import combined_hull, combined_weight_update, max_margin_weights
from cegal.margin import (HullSum, frank_wolfe_distance, grid_search_margin, margin_of,
                          max_margin, min_norm_point, points_hull)
from oracles import grid_margin_2d, hull_distance_subsets, sum_vertices


def test_single_candidate_equal_to_expert():
    w, delta = max_margin_weights([1.0, 2.0], [[1.0, 2.0]])
    assert delta == 0.0 and np.all(w == 0)


def test_one_dimensional():
    w, delta = max_margin_weights([3.0], [[1.0]])
    assert w == pytest.approx([1.0]) and delta == pytest.approx(2.0)


def test_two_dimensional_example():
    mu_E, mus = [1.0, 0.0], [[0.0, 0.0], [0.0, 1.0]]
    w, delta = max_margin_weights(mu_E, mus)
    V = np.asarray(mu_E) - np.asarray(mus)
    assert delta == pytest.approx(grid_margin_2d(V), abs=1e-3)
    # hand value: nearest hull point of {(1,0),(1,-1)} is (1,0)
    assert delta == pytest.approx(1.0, abs=1e-12)
    assert w == pytest.approx([1.0, 0.0], abs=1e-12)


def test_origin_inside_hull():
    w, delta = max_margin(points_hull([[1, 0], [-1, 1], [-1, -1]]))
    assert delta == 0.0 and np.all(w == 0)


def test_empty_candidates_rejected():
    with pytest.raises(ValueError):
        max_margin_weights([1.0], [])


def random_points(rng, dim):
    k = int(rng.integers(1, 8))
    centre = rng.normal(size=dim) * rng.choice([0.0, 1.0, 3.0])
    return centre + rng.normal(size=(k, dim))


@given(st.integers(0, 100_000), st.sampled_from([2, 3, 5]))
@settings(max_examples=80)
def test_min_norm_matches_oracles(seed, dim):
    rng = np.random.default_rng(seed)
    V = random_points(rng, dim)
    hull = points_hull(V)
    w, delta = max_margin(hull)
    assert delta == pytest.approx(frank_wolfe_distance(hull).distance, abs=1e-6)
    assert delta == pytest.approx(hull_distance_subsets(V), abs=1e-6)
    if delta > 0:
        assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)
        # w attains the margin it reports
        assert margin_of(w, hull) == pytest.approx(delta, abs=1e-9)
    assert np.linalg.norm(w) <= 1 + 1e-9


@given(st.integers(0, 100_000))
@settings(max_examples=60)
def test_grid_search_2d(seed):
    rng = np.random.default_rng(seed)
    V = random_points(rng, 2)
    _, delta = max_margin(points_hull(V))
    assert delta == pytest.approx(grid_margin_2d(V), abs=1e-3)
    assert delta == pytest.approx(grid_search_margin(V)[1], abs=1e-3)


@given(st.integers(0, 100_000), st.integers(1, 3))
@settings(max_examples=60)
def test_lmo_matches_explicit_vertices(seed, n_blocks):
    rng = np.random.default_rng(seed)
    dim = 3
    blocks = [(float(rng.choice([-1.0, 0.5, 1.0])), rng.normal(size=(int(rng.integers(1, 4)), dim)))
              for _ in range(n_blocks)]
    offset = rng.normal(size=dim)
    hull = HullSum(offset, blocks)
    V = sum_vertices(offset, blocks)
    assert np.allclose(np.sort(hull.vertices(), axis=0), np.sort(V, axis=0))
    for _ in range(5):
        d = rng.normal(size=dim)
        _, v = hull.lmo(d)
        assert d @ v == pytest.approx((V @ d).min(), abs=1e-12)
    # the minimum-norm point over the implicit sum equals the explicit hull's
    assert min_norm_point(hull).norm == pytest.approx(hull_distance_subsets(V), abs=1e-6)


def test_block_dimension_checked():
    with pytest.raises(ValueError):
        HullSum([0.0, 0.0], [(1.0, np.ones((2, 3)))])


# ---------------------------------------------------------------------------
# combined update

def test_k_one_is_plain_max_margin():
    rng = np.random.default_rng(0)
    mu_E, S, C = rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    w1 = combined_weight_update(mu_E, S, C, 1.0)
    w2, _ = max_margin_weights(mu_E, S)
    assert w1 == pytest.approx(w2, abs=1e-12)


def test_k_zero_single_pair():
    s, c = np.array([1.0, 2.0, 0.5]), np.array([0.0, -1.0, 0.5])
    w = combined_weight_update(np.zeros(3), [s], [c], 0.0)
    assert w == pytest.approx((s - c) / np.linalg.norm(s - c), abs=1e-12)


@given(st.integers(0, 100_000))
@settings(max_examples=40)
def test_k_half_matches_grid(seed):
    rng = np.random.default_rng(seed)
    mu_E = rng.normal(size=2) * 2
    S = rng.normal(size=(int(rng.integers(1, 4)), 2))
    C = rng.normal(size=(int(rng.integers(1, 3)), 2))
    k = 0.5
    w, delta = combined_weight_update(mu_E, S, C, k, return_margin=True)
    V = np.array([k * (mu_E - a) + (1 - k) * (b - c) for a in S for b in S for c in C])
    assert delta == pytest.approx(grid_margin_2d(V), abs=1e-3)
    assert np.linalg.norm(w) <= 1 + 1e-9


def test_combined_hull_without_counterexamples():
    hull = combined_hull([1.0, 1.0], [[0.0, 0.0]], [], 0.3)
    assert np.allclose(hull.vertices(), [[1.0, 1.0]])


def test_combined_update_errors():
    with pytest.raises(ValueError):
        combined_weight_update([0.0], [], [[1.0]], 0.5)
    with pytest.raises(ValueError):
        combined_weight_update([0.0], [[1.0]], [[1.0]], 1.5)
