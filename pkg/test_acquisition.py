"""
Tests for the cost-weighted GIBBON acquisition
"""

import numpy as np
import pytest

from agents.acquisition import (
    AcqConfig,
    MaxValueSamples,
    ModelView,
    gibbon_information_gain,
    greedy_gibbon_batch,
    inverse_mills,
    mf_mes,
    normal_cdf,
    normal_pdf,
    sample_max_values,
    score_batch,
)
from agents.surrogate import SurrogateConfig, fidelity_norm, fit
from tools.environments import HyperGrid


@pytest.fixture
def grid_view():
    """GP fitted (without optimisation) on a few two-fidelity points of a 6x6 grid."""
    env = HyperGrid(6, 2, n_fidelities=2)
    objects = [(0, 0), (1, 4), (3, 3), (5, 1), (2, 5), (4, 4), (5, 5)]
    ms = np.array([1, 1, 1, 1, 2, 2, 2])
    X = env.features(objects)
    y = np.sin(3 * X[:, 0]) + X[:, 1] - 0.1 * (ms == 1)
    model = fit(X, fidelity_norm(ms, 2), y, SurrogateConfig(optimize=False, lengthscale=0.4))
    return ModelView(model, env, 2)


def candidates():
    return [((i, j), m) for i in range(0, 6, 2) for j in range(0, 6, 2) for m in (1, 2)]


def test_information_gain_vanishes_without_correlation():
    samples = MaxValueSamples(np.array([1.0, 1.5, 2.0]))
    ig = gibbon_information_gain([0.2, -1.0], [0.5, 2.0], [0.0, 0.0], samples)
    assert np.all(np.abs(ig) <= 1e-12)


def test_information_gain_is_non_negative_and_monotone_in_correlation():
    samples = MaxValueSamples(np.array([0.5, 1.0, 3.0]))
    rhos = np.linspace(0.0, 0.99, 25)
    for mean, sd in [(0.0, 1.0), (2.0, 0.3), (-3.0, 0.5)]:
        ig = gibbon_information_gain(np.full(25, mean), np.full(25, sd), rhos, samples)
        assert np.all(ig >= 0)
        assert np.all(np.diff(ig) >= -1e-15)
        assert np.allclose(ig, gibbon_information_gain(np.full(25, mean), np.full(25, sd), -rhos, samples))


def test_inverse_mills_is_continuous_at_the_tail_switch():
    left, right = inverse_mills(np.array([-6.0001, -5.9999]))
    assert left == pytest.approx(right, rel=1e-3)
    assert inverse_mills(np.array([0.0]))[0] == pytest.approx(normal_pdf(0.0) / 0.5)
    assert np.isfinite(inverse_mills(np.array([-40.0]))[0])
    assert normal_cdf(np.array([0.0]))[0] == pytest.approx(0.5)


def test_cost_division(grid_view):
    samples = MaxValueSamples(np.array([1.0, 1.4]))
    cheap = mf_mes(grid_view, (2, 2), 1, samples, costs=(0.01, 1.0))
    flat = mf_mes(grid_view, (2, 2), 1, samples, costs=(1.0, 1.0))
    assert cheap == pytest.approx(100 * flat, rel=1e-9)
    assert flat > 0


def test_batch_scores_match_pointwise(grid_view):
    samples = MaxValueSamples(np.array([1.0, 1.4, 1.9]))
    pairs = candidates()
    batch = score_batch(grid_view, pairs, samples, costs=(0.1, 1.0))
    pointwise = [mf_mes(grid_view, x, m, samples, costs=(0.1, 1.0)) for x, m in pairs]
    assert np.allclose(batch, pointwise, rtol=1e-9, atol=1e-12)
    assert score_batch(grid_view, [], samples, costs=(0.1, 1.0)).size == 0


def test_max_value_samples_are_seeded(grid_view):
    config = AcqConfig(n_max_value_samples=8, candidate_pool_size=100)
    first = sample_max_values(grid_view, config, np.random.default_rng(4))
    second = sample_max_values(grid_view, config, np.random.default_rng(4))
    assert first.n_samples == 8
    assert np.array_equal(first.values, second.values)
    # small space: every sample is the max of a joint draw over all 36 cells
    assert np.all(np.isfinite(first.values))


def test_max_value_samples_with_sampled_pool(grid_view):
    config = AcqConfig(n_max_value_samples=3, candidate_pool_size=10)
    samples = sample_max_values(grid_view, config, np.random.default_rng(0))
    assert samples.n_samples == 3


def test_max_value_samples_validation():
    with pytest.raises(ValueError):
        MaxValueSamples(np.array([]))
    with pytest.raises(ValueError):
        MaxValueSamples(np.array([np.nan]))


def test_single_fidelity_view_uses_unit_cost(grid_view):
    env = HyperGrid(6, 2, n_fidelities=2)
    objects = [(0, 0), (3, 3), (5, 5)]
    model = fit(env.features(objects), np.ones(3), np.array([0.0, 1.0, 0.5]), SurrogateConfig(optimize=False))
    view = ModelView(model, env, 1, {2: 1})
    _, m_norm, ms = view.inputs([((1, 1), 2)])
    assert m_norm.tolist() == [1.0] and ms.tolist() == [1]
    samples = MaxValueSamples(np.array([1.2]))
    assert mf_mes(view, (1, 1), 2, samples, costs=(1.0,)) > 0


def test_greedy_batch(grid_view):
    samples = MaxValueSamples(np.array([1.0, 1.4, 1.9]))
    pairs = candidates()
    costs = (0.1, 1.0)
    picks = greedy_gibbon_batch(grid_view, pairs, samples, costs, batch_size=5)
    assert len(picks) == len(set(picks)) == 5
    assert picks[0] == int(np.argmax(score_batch(grid_view, pairs, samples, costs)))
    assert len(greedy_gibbon_batch(grid_view, pairs[:3], samples, costs, batch_size=10)) == 3
    assert greedy_gibbon_batch(grid_view, [], samples, costs, batch_size=3) == []
