"""Environment tests: reward families, context samplers, transforms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditlab import network as net
from banditlab.bandits import (
    ClassificationBandit,
    MushroomBandit,
    SyntheticSpec,
    block_contexts,
    duplicate_transform,
    gaussian_blobs,
    make_synthetic_bandit,
    optimal_value,
    pad_to_even,
    prepare_features,
    sample_sphere,
    synthetic_reward,
    unit_sphere_transform,
)


def test_h1_example():
    spec = SyntheticSpec(family="h1", direction=np.array([1.0, 0.0]))
    assert synthetic_reward(spec, np.array([0.5, 0.2])) == pytest.approx(2.5, abs=1e-12)


def test_h3_example():
    spec = SyntheticSpec(family="h3", direction=np.array([1.0, 0.0]))
    assert synthetic_reward(spec, np.array([0.0, 1.0])) == pytest.approx(1.0, abs=1e-12)


def test_h2_matches_quadratic_identity(rng):
    spec = SyntheticSpec.generate("h2", 6, seed=5)
    for _ in range(10):
        u = rng.normal(size=6)
        direct = np.linalg.norm(spec.mixing @ u) ** 2
        assert synthetic_reward(spec, u) == pytest.approx(direct, abs=1e-12)


def test_synthetic_spec_direction_is_unit():
    for family in ("h1", "h3"):
        spec = SyntheticSpec.generate(family, 12, seed=3)
        assert np.linalg.norm(spec.direction) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        SyntheticSpec.generate("h4", 4, seed=0)


def test_synthetic_reward_dimension_check():
    spec = SyntheticSpec.generate("h1", 4, seed=0)
    with pytest.raises(ValueError):
        synthetic_reward(spec, np.ones(6))


def test_sampled_contexts_are_unit_norm(rng):
    bandit = make_synthetic_bandit("h1", 10, 5, seed=0)
    cs = bandit.sample_contexts(rng)
    assert cs.arms.shape == (5, 10)
    assert np.allclose(np.linalg.norm(cs.arms, axis=1), 1.0, atol=1e-12)


def test_sphere_sampler_is_centered():
    rng = np.random.default_rng(0)
    draws = sample_sphere(rng, 6, 100_000)
    assert np.linalg.norm(draws.mean(axis=0)) < 0.02


def test_context_stream_deterministic():
    bandit = make_synthetic_bandit("h3", 8, 4, seed=1)
    a = bandit.sample_contexts(np.random.default_rng(7))
    b = bandit.sample_contexts(np.random.default_rng(7))
    assert np.array_equal(a.arms, b.arms)
    assert np.array_equal(a.means, b.means)


def test_reward_noise_is_centered_gaussian():
    bandit = make_synthetic_bandit("h1", 6, 3, seed=2, noise_std=0.1)
    rng = np.random.default_rng(3)
    cs = bandit.sample_contexts(rng)
    draws = np.array([bandit.sample_reward(cs, 1, rng) for _ in range(100_000)])
    residual = draws - cs.means[1]
    assert abs(residual.mean()) < 3 * 0.1 / np.sqrt(draws.size)
    assert residual.std() == pytest.approx(0.1, rel=0.02)


def test_block_context_construction():
    arms = block_contexts(np.array([1.0, 0.0]), 3)
    assert arms.shape == (3, 6)
    assert np.array_equal(arms[2], np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]))
    # pairwise orthogonal by construction
    assert np.allclose(arms @ arms.T, np.diag((arms * arms).sum(axis=1)))


def test_classification_bandit_means_and_optimum(rng):
    features = np.array([[1.0, 0.0], [0.0, 1.0]])
    bandit = ClassificationBandit(features, np.array([1, 2]), num_classes=3)
    cs = bandit.sample_contexts(rng)
    assert cs.means.sum() == 1.0
    assert set(np.unique(cs.means)) <= {0.0, 1.0}
    assert optimal_value(bandit, cs) == 1.0
    assert bandit.sample_reward(cs, int(np.argmax(cs.means)), rng) == 1.0


def test_classification_bandit_rejects_bad_labels():
    with pytest.raises(ValueError):
        ClassificationBandit(np.ones((2, 2)), np.array([0, 3]), num_classes=3)
    with pytest.raises(ValueError):
        ClassificationBandit(np.ones((0, 2)), np.array([], dtype=int))


def test_mushroom_reward_rules(rng):
    features = np.array([[1.0, 0.0], [0.0, 1.0]])
    bandit = MushroomBandit(features, np.array([True, False]))
    for _ in range(20):
        cs = bandit.sample_contexts(rng)
        assert bandit.sample_reward(cs, 1, rng) == 0.0  # passing always pays 0
        if cs.means[0] == 5.0:  # edible rows always pay +5 when eaten
            assert bandit.sample_reward(cs, 0, rng) == 5.0
        else:
            assert bandit.sample_reward(cs, 0, rng) in (5.0, -35.0)
    assert optimal_value(bandit, cs) in (0.0, 5.0)


def test_mushroom_poisonous_mean(rng):
    features = np.array([[1.0]])
    bandit = MushroomBandit(features, np.array([False]))
    cs = bandit.sample_contexts(rng)
    draws = np.array([bandit.sample_reward(cs, 0, rng) for _ in range(100_000)])
    assert abs(draws.mean() - (-15.0)) < 0.5


def test_unit_sphere_transform_example():
    assert np.allclose(unit_sphere_transform(np.array([3.0, 4.0])), [0.6, 0.8])
    with pytest.raises(ValueError):
        unit_sphere_transform(np.zeros(3))


def test_duplicate_transform_example():
    out = duplicate_transform(np.array([1.0, 0.0]))
    assert np.allclose(out, np.array([1.0, 0.0, 1.0, 0.0]) / np.sqrt(2.0))
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.integers(0, 2**31 - 1))
def test_duplicate_transform_properties(values, seed):
    x = np.asarray(values) + np.random.default_rng(seed).normal(size=len(values)) * 1e-3
    out = duplicate_transform(x)
    assert out.shape == (2 * x.size,)
    assert np.allclose(out[: x.size], out[x.size :])
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(x), rel=1e-9, abs=1e-12)


def test_duplicated_input_gives_zero_at_init(rng):
    cfg = net.NetworkConfig(depth=2, width=8, input_dim=8)
    params = net.init_symmetric(cfg, 5)
    x = unit_sphere_transform(rng.normal(size=4))
    assert abs(net.forward(params, duplicate_transform(x))) < 1e-4 * np.sqrt(8)


def test_optimal_value_matches_enumeration(rng):
    bandit = make_synthetic_bandit("h1", 6, 7, seed=9)
    cs = bandit.sample_contexts(rng)
    brute = max(synthetic_reward(bandit.spec, cs.arms[a]) for a in range(7))
    assert optimal_value(bandit, cs) == pytest.approx(brute, abs=1e-12)


def test_reward_ranges(rng):
    h1 = make_synthetic_bandit("h1", 8, 5, seed=0)
    h3 = make_synthetic_bandit("h3", 8, 5, seed=0)
    for _ in range(50):
        cs1 = h1.sample_contexts(rng)
        cs3 = h3.sample_contexts(rng)
        assert np.all(cs1.means >= 0.0) and np.all(cs1.means <= 10.0)
        assert np.all(cs3.means >= -1.0) and np.all(cs3.means <= 1.0)


def test_prepare_features_scales_and_normalizes():
    raw = np.array([[1.0, 20.0], [5.0, 10.0], [10.0, 12.0]])
    out = prepare_features(raw)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0)
    assert np.array_equal(out[0], np.array([0.0, 1.0]))  # min-max scaled first
    with pytest.raises(ValueError):
        prepare_features(np.array([[0.0, 0.0], [1.0, 1.0]]))


def test_pad_to_even():
    odd = np.ones((3, 5))
    assert pad_to_even(odd).shape == (3, 6)
    even = np.ones((3, 4))
    assert pad_to_even(even) is even


def test_gaussian_blobs_are_separable_and_unit():
    features, labels = gaussian_blobs(3, 10, 600, seed=4, noise_std=0.1)
    assert features.shape == (600, 10)
    assert np.allclose(np.linalg.norm(features, axis=1), 1.0)
    assert set(np.unique(labels)) == {0, 1, 2}
    # nearest-centroid classification should be nearly perfect
    centroids = np.stack([features[labels == k].mean(axis=0) for k in range(3)])
    nearest = np.argmax(features @ centroids.T, axis=1)
    assert (nearest == labels).mean() > 0.99
