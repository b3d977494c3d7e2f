from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beliefbounds import metrics
from beliefbounds.belief import (
    ImpossibleObservation,
    belief_grid,
    belief_ground_metric,
    belief_update,
    filter_kernel_at,
    filter_kernel_distance,
    obs_predictive,
    predictive_tv_gap,
)
from beliefbounds.model import FiniteMetricSpace

from conftest import random_pomdp, two_state_model


@pytest.fixture
def hand():
    """Two states, one action; the prediction from (0.5, 0.5) is (0.55, 0.45)."""
    return two_state_model(
        kernel=[[[0.9, 0.1], [0.2, 0.8]]], cost=[[0.0], [1.0]], action_labels=("run",)
    )


def test_obs_predictive_by_hand(hand):
    h = obs_predictive(hand, [0.5, 0.5], 0)
    assert h == pytest.approx([0.575, 0.425], abs=1e-15)


def test_posterior_by_hand(hand):
    post = belief_update(hand, [0.5, 0.5], 0, 0)
    assert post == pytest.approx(np.array([0.44, 0.135]) / 0.575, abs=1e-15)


def test_filter_kernel_by_hand(hand):
    fk = filter_kernel_at(hand, [0.5, 0.5], 0)
    assert fk.weights == pytest.approx([0.575, 0.425])
    assert fk.posteriors[1] == pytest.approx(np.array([0.11, 0.315]) / 0.425)


def test_noiseless_channel_gives_vertex_atoms(two_state):
    m = two_state.with_(channel=np.eye(2))
    z = np.array([0.3, 0.7])
    fk = filter_kernel_at(m, z, 0)
    assert fk.posteriors == pytest.approx(np.eye(2))
    assert fk.weights == pytest.approx(z @ m.kernel[0])
    assert obs_predictive(m.with_(kernel=[np.eye(2)] * 2), [1.0, 0.0], 0) == pytest.approx([1.0, 0.0])


def test_uninformative_channel_gives_one_atom(two_state):
    m = two_state.with_(channel=np.full((2, 2), 0.5))
    z = np.array([0.2, 0.8])
    fk = filter_kernel_at(m, z, 1)
    assert len(fk) == 1 and fk.weights[0] == pytest.approx(1.0)
    assert fk.posteriors[0] == pytest.approx(z @ m.kernel[1])
    assert obs_predictive(m, z, 1) == pytest.approx([0.5, 0.5])


def test_impossible_observation_raises(two_state):
    m = two_state.with_(channel=np.eye(2), kernel=[np.eye(2)] * 2)
    with pytest.raises(ImpossibleObservation):
        belief_update(m, [1.0, 0.0], 0, 1)
    assert len(filter_kernel_at(m, [1.0, 0.0], 0)) == 1


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_posteriors_average_to_the_prediction(seed):
    rng = np.random.default_rng(seed)
    m = random_pomdp(rng, 3, 3, 2)
    z = rng.dirichlet(np.ones(3))
    u = int(rng.integers(2))
    fk = filter_kernel_at(m, z, u)
    assert fk.weights @ fk.posteriors == pytest.approx(z @ m.kernel[u], abs=1e-12)
    assert fk.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_atom_weights_are_the_predictive_law(rng):
    m = random_pomdp(rng, 3, 4, 2)
    z = rng.dirichlet(np.ones(3))
    fk = filter_kernel_at(m, z, 1)
    assert np.sort(fk.weights) == pytest.approx(np.sort(obs_predictive(m, z, 1)), abs=1e-15)


def test_belief_grid_sizes():
    g = belief_grid(2, 2)
    assert {tuple(b) for b in g.beliefs} == {(1.0, 0.0), (0.5, 0.5), (0.0, 1.0)}
    assert len(belief_grid(3, 1)) == 3
    assert len(belief_grid(3, 4)) == 15
    for n, m in [(2, 10), (3, 6), (4, 3)]:
        g = belief_grid(n, m)
        assert len(g) == comb(m + n - 1, n - 1)
        assert len({tuple(b) for b in g.beliefs}) == len(g)
        assert np.allclose(g.beliefs.sum(axis=1), 1.0)
        # vertices come first
        assert np.array_equal(np.sort(g.beliefs[:n], axis=0), np.sort(np.eye(n), axis=0))
    with pytest.raises(ValueError):
        belief_grid(2, 0)


def test_ground_metric_on_vertices():
    space = FiniteMetricSpace.from_coordinates([0.0, 2.0, 5.0])
    g = belief_ground_metric(np.eye(3), space, "W1")
    assert g.dist == pytest.approx(space.dist)
    tv = belief_ground_metric(np.eye(3), space, "TV")
    assert np.all(np.diag(tv.dist) == 0)


def test_ground_metric_is_a_metric(rng):
    space = FiniteMetricSpace.from_coordinates(rng.random(3))
    for kind in ("W1", "BL", "TV"):
        g = belief_ground_metric(rng.dirichlet(np.ones(3), size=6), space, kind)
        assert g.violations() == []


def test_identical_models_have_zero_distance(two_state):
    grid = belief_grid(2, 8)
    for kind in ("BL", "W1"):
        assert filter_kernel_distance(two_state, two_state, grid, kind).value == 0.0
    assert predictive_tv_gap(two_state, two_state, grid).value == 0.0


def test_uniform_channel_replacement_within_main_bound(two_state):
    grid = belief_grid(2, 20)
    approx = two_state.with_(channel=np.full((2, 2), 0.5))
    d_q = metrics.channel_distance(approx.channel, two_state.channel, "TV")
    res = filter_kernel_distance(approx, two_state, grid, "BL")
    assert 0 < res.value <= 2 * d_q + 1e-12
    assert res.belief == pytest.approx(grid.beliefs[res.grid_index])
    gap = predictive_tv_gap(approx, two_state, grid).value
    assert gap <= d_q + 1e-12


def test_kernel_row_perturbation_within_bounds(two_state):
    grid = belief_grid(2, 20)
    kernel = np.array(two_state.kernel)
    kernel[0, 1] = [0.35, 0.65]
    approx = two_state.with_(kernel=kernel)
    d_t = metrics.kernel_distance(approx.kernel, two_state.kernel, "TV")
    assert filter_kernel_distance(approx, two_state, grid, "BL").value <= 2 * d_t + 1e-12
    assert predictive_tv_gap(approx, two_state, grid).value <= d_t + 1e-12


def test_models_must_share_spaces(two_state, rng):
    other = random_pomdp(rng, 3, 2, 2)
    with pytest.raises(ValueError):
        filter_kernel_distance(two_state, other, belief_grid(2, 2), "BL")
