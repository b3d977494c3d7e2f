import math

import numpy as np
import pytest
from scipy.special import ndtr

from beliefbounds import metrics
from beliefbounds.model import FiniteMetricSpace, derive_constants, validate_model
from beliefbounds.quantize import (
    ContinuousModelAdapter,
    QuantizationError,
    density_lipschitz,
    discretize_reference,
    gaussian_cell_masses,
    interval_partition,
    joint_quantize,
    lift_coarse_kernel,
    lifted_approximation,
    merge_channel,
    point_partition,
    quantize_observations,
    quantize_states,
    singleton_partition,
    spread_channel,
)
from beliefbounds.belief import belief_update, belief_grid

from conftest import random_pomdp


def _truncnorm_masses(mean, sigma, lo, hi, n):
    """Cell masses as differences of the standard normal CDF."""
    edges = np.linspace(lo, hi, n + 1)
    cdf = ndtr((edges - mean) / sigma)
    return np.diff(cdf) / (cdf[-1] - cdf[0])


@pytest.mark.parametrize("mean, sigma", [(0.3, 0.2), (0.5, 1.0), (0.9, 0.05), (0.5, 50.0)])
def test_cell_masses_match_cdf_differences(mean, sigma):
    rows, defect = gaussian_cell_masses([mean], sigma, (0.0, 1.0), 40)
    assert defect <= 1e-6
    assert rows[0] == pytest.approx(_truncnorm_masses(mean, sigma, 0.0, 1.0, 40), abs=1e-10)


def test_wide_gaussian_is_nearly_uniform():
    rows, _ = gaussian_cell_masses([0.5], 1e4, (0.0, 1.0), 10)
    assert rows[0] == pytest.approx(np.full(10, 0.1), abs=1e-8)


def test_reference_model_is_valid_and_accurate():
    ad = ContinuousModelAdapter(sigma=0.5, drifts=(-0.1, 0.2), fine_grid_size=100, obs_grid_size=30)
    fine, defect = discretize_reference(ad)
    assert validate_model(fine) == []
    assert defect <= 1e-6
    assert fine.kernel.shape == (2, 100, 100)


def test_table_adapter_passes_through(two_state):
    model, defect = discretize_reference(ContinuousModelAdapter(kind="table_on_fine_grid", table=two_state))
    assert model is two_state and defect == 0.0


def test_bad_adapter_rejected():
    with pytest.raises(QuantizationError):
        discretize_reference(ContinuousModelAdapter(sigma=-1.0))


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_truncated_normal_alpha_below_closed_form(sigma):
    ad = ContinuousModelAdapter(sigma=sigma, fine_grid_size=200, obs_grid_size=6)
    fine, _ = discretize_reference(ad)
    assert derive_constants(fine).alpha <= math.sqrt(2) / (sigma * math.sqrt(math.pi)) + 1e-9


def test_interval_partition_cells():
    space = FiniteMetricSpace.from_coordinates((np.arange(8) + 0.5) / 8)
    part = interval_partition(space, 4, (0.0, 1.0))
    assert part.violations(8) == []
    assert [c.tolist() for c in part.cells] == [[0, 1], [2, 3], [4, 5], [6, 7]]
    assert part.max_cell_diameter == 0.25
    # boundary points go to the lower cell
    edge = FiniteMetricSpace.from_coordinates([0.0, 0.5, 1.0])
    assert [c.tolist() for c in interval_partition(edge, 2, (0.0, 1.0)).cells] == [[0, 1], [2]]
    with pytest.raises(QuantizationError):
        interval_partition(space, 16, (0.0, 1.0))


def test_singleton_quantization_is_identity(rng):
    fine = random_pomdp(rng, 4, 3, 2)
    part = singleton_partition(fine.state_space)
    coarse, l_xn = quantize_states(fine, part)
    assert l_xn == 0.0
    assert np.allclose(coarse.kernel, fine.kernel)
    assert np.allclose(coarse.channel, fine.channel)
    assert np.allclose(coarse.cost, fine.cost)
    assert np.allclose(lift_coarse_kernel(coarse, part, fine.state_space), fine.kernel)
    obs_part = singleton_partition(fine.obs_space)
    assert np.allclose(quantize_observations(fine, obs_part)[0].channel, fine.channel)
    both, _, _ = joint_quantize(fine, part, obs_part)
    assert np.allclose(both.kernel, fine.kernel) and np.allclose(both.channel, fine.channel)


def test_two_cell_averages_by_hand():
    fine = random_pomdp(np.random.default_rng(5), 4, 2, 1, coords=[0.0, 1.0, 2.0, 3.0])
    part = point_partition(fine.state_space, [[0, 1], [2, 3]])
    coarse, _ = quantize_states(fine, part)
    K = fine.kernel[0]
    row0 = 0.5 * (K[0] + K[1])
    assert coarse.kernel[0, 0] == pytest.approx([row0[:2].sum(), row0[2:].sum()])
    assert coarse.channel[1] == pytest.approx(0.5 * (fine.channel[2] + fine.channel[3]))
    assert coarse.cost[0] == pytest.approx(0.5 * (fine.cost[0] + fine.cost[1]))
    lifted = lift_coarse_kernel(coarse, part, fine.state_space)
    assert np.array_equal(lifted[0, 0], lifted[0, 1])
    assert np.allclose(lifted.sum(axis=2), 1.0)


def test_zero_mass_cell_is_named(rng):
    fine = random_pomdp(rng, 4, 2, 1, coords=[0.0, 1.0, 2.0, 3.0])
    part = point_partition(fine.state_space, [[0, 1], [2, 3]])
    with pytest.raises(QuantizationError, match="cell 1"):
        quantize_states(fine, part, reference=[0.5, 0.5, 0.0, 0.0])


def test_merge_all_observations_is_uninformative(rng):
    fine = random_pomdp(rng, 3, 4, 2)
    part = point_partition(fine.obs_space, [[0, 1, 2, 3]])
    model, _ = quantize_observations(fine, part)
    assert np.allclose(model.channel, 1.0)
    assert metrics.dobrushin(model.channel) == pytest.approx(1.0)


def test_state_quantization_rate_halves():
    ad = ContinuousModelAdapter(sigma=1.0, drifts=(0.0, 0.2), fine_grid_size=160, obs_grid_size=6)
    fine, defect = discretize_reference(ad)
    alpha = derive_constants(fine).alpha
    prev = None
    for n in (5, 10, 20, 40):
        part = interval_partition(fine.state_space, n, ad.domain)
        coarse, l_xn = quantize_states(fine, part)
        lhs = metrics.kernel_distance(lift_coarse_kernel(coarse, part, fine.state_space), fine.kernel, "W1", fine.state_space)
        assert lhs <= (alpha + 1) * l_xn + 1e-9 + defect
        if prev is not None:
            assert l_xn == pytest.approx(prev / 2)
        prev = l_xn


def test_spread_channel_has_the_same_posteriors(rng):
    """The spread channel is informationally equivalent to the merged one:
    within a cell every fine observation yields the cell's posterior."""
    ad = ContinuousModelAdapter(sigma=1.0, fine_grid_size=6, obs_grid_size=12)
    fine, _ = discretize_reference(ad)
    part = interval_partition(fine.obs_space, 3, ad.obs_domain)
    widths = np.full(12, 3.0 / 12)
    merged = fine.with_(channel=merge_channel(fine.channel, part))
    spread = fine.with_(channel=spread_channel(merged.channel, part, widths, 12))
    z = rng.dirichlet(np.ones(6))
    for k, cell in enumerate(part.cells):
        want = belief_update(merged, z, 0, k)
        for y in cell:
            assert belief_update(spread, z, 0, int(y)) == pytest.approx(want, abs=1e-12)


def test_observation_quantization_bound():
    ad = ContinuousModelAdapter(sigma=1.0, fine_grid_size=10, obs_grid_size=120, obs_sigma=0.4)
    fine, _ = discretize_reference(ad)
    widths = np.full(120, 3.0 / 120)
    alpha_y = density_lipschitz(fine.channel, fine.obs_space, widths)
    diam_prev = math.inf
    for n in (4, 8, 24, 60):
        part = interval_partition(fine.obs_space, n, ad.obs_domain)
        tilde = spread_channel(merge_channel(fine.channel, part), part, widths, 120)
        assert metrics.channel_distance(tilde, fine.channel, "TV") <= alpha_y * part.max_cell_diameter + 1e-9
        assert part.max_cell_diameter <= diam_prev
        diam_prev = part.max_cell_diameter


def test_gaussian_shift_within_pinsker():
    # ||N(a, s^2) - N(b, s^2)||_1 <= |a - b| / s on cell masses
    for a, b, s in [(0.0, 0.3, 1.0), (-1.0, 1.0, 2.0), (0.2, 0.25, 0.1)]:
        rows, defect = gaussian_cell_masses([a, b], s, (-12 * s - 2, 12 * s + 2), 600)
        assert np.abs(rows[0] - rows[1]).sum() <= abs(a - b) / s + defect + 1e-12


def test_lifted_approximation_lives_on_fine_space():
    ad = ContinuousModelAdapter(sigma=1.0, drifts=(0.0, 0.1), fine_grid_size=8, obs_grid_size=6)
    fine, _ = discretize_reference(ad)
    sp = interval_partition(fine.state_space, 2, ad.domain)
    op = interval_partition(fine.obs_space, 3, ad.obs_domain)
    lifted = lifted_approximation(fine, sp, op)
    assert validate_model(lifted) == []
    assert lifted.kernel.shape == fine.kernel.shape
    assert lifted.n_obs == 3
    assert len(belief_grid(lifted.n_states, 1)) == 8
