"""Network, gradient, loss, and optimizer tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditlab import network as net
from banditlab.bandits import duplicate_transform, unit_sphere_transform

from conftest import (
    finite_diff_gradient,
    finite_diff_loss_gradient,
    sample_fd_case,
)


def test_param_count_example():
    cfg = net.NetworkConfig(depth=3, width=6, input_dim=4)
    assert cfg.num_params == 6 * 4 + 6 + 36 == 66
    params = net.init_symmetric(cfg, 0)
    assert params.flat().shape == (66,)


@given(
    depth=st.integers(2, 5),
    width=st.integers(1, 10).map(lambda k: 2 * k),
    dim=st.integers(1, 8).map(lambda k: 2 * k),
)
def test_param_count_formula(depth, width, dim):
    cfg = net.NetworkConfig(depth=depth, width=width, input_dim=dim)
    assert cfg.num_params == width * dim + width + width * width * (depth - 2)
    assert cfg.num_params == sum(a * b for a, b in cfg.layer_shapes())


@pytest.mark.parametrize("bad", [dict(width=3), dict(input_dim=5), dict(depth=1)])
def test_config_rejects_bad_shapes(bad):
    kwargs = dict(depth=2, width=4, input_dim=4)
    kwargs.update(bad)
    with pytest.raises(net.ConfigError):
        net.NetworkConfig(**kwargs)


@pytest.mark.parametrize("layer_norm", [False, True])
@pytest.mark.parametrize("depth,width,dim", [(2, 4, 4), (3, 8, 6), (4, 6, 8)])
def test_init_zero_on_duplicated_inputs(depth, width, dim, layer_norm, rng):
    cfg = net.NetworkConfig(depth=depth, width=width, input_dim=dim, layer_norm=layer_norm)
    params = net.init_symmetric(cfg, 7)
    for _ in range(20):
        x = rng.normal(size=dim // 2)
        u = duplicate_transform(unit_sphere_transform(x))
        assert abs(net.forward(params, u)) < 1e-4 * np.sqrt(width)


def test_init_deterministic():
    cfg = net.NetworkConfig(depth=3, width=8, input_dim=4)
    a = net.init_symmetric(cfg, 42)
    b = net.init_symmetric(cfg, 42)
    assert all(np.array_equal(x, y) for x, y in zip(a.layers, b.layers))
    c = net.init_symmetric(cfg, 43)
    assert any(not np.array_equal(x, y) for x, y in zip(a.layers, c.layers))


def test_init_block_structure():
    cfg = net.NetworkConfig(depth=3, width=8, input_dim=6)
    params = net.init_symmetric(cfg, 0)
    first = params.layers[0]
    assert np.array_equal(first[:4, :3], first[4:, 3:])
    assert np.all(first[:4, 3:] == 0.0) and np.all(first[4:, :3] == 0.0)
    hidden = params.layers[1]
    assert np.array_equal(hidden[:4, :4], hidden[4:, 4:])
    assert np.all(hidden[:4, 4:] == 0.0) and np.all(hidden[4:, :4] == 0.0)
    last = params.layers[2][:, 0]
    assert np.array_equal(last[:4], -last[4:])
    for w, w0 in zip(params.layers, params.init_layers):
        assert np.array_equal(w, w0)


def test_init_snapshot_is_frozen():
    params = net.init_symmetric(net.NetworkConfig(2, 4, 4), 0)
    with pytest.raises(ValueError):
        params.init_layers[0][0, 0] = 1.0
    # mutating the live weights must not touch the snapshot
    before = params.init_layers[0].copy()
    params.set_flat(params.flat() + 1.0)
    assert np.array_equal(params.init_layers[0], before)
    assert not np.array_equal(params.layers[0], before)


def test_forward_zero_weights():
    cfg = net.NetworkConfig(depth=3, width=4, input_dim=4)
    params = net.NetworkParams(cfg, [np.zeros(s) for s in cfg.layer_shapes()])
    assert net.forward(params, np.ones(4)) == 0.0


def test_forward_manual_two_layer():
    # identity first layer, all-ones output layer: f(u) = sqrt(2) * (u1 + u2)
    cfg = net.NetworkConfig(depth=2, width=2, input_dim=2)
    params = net.NetworkParams(cfg, [np.eye(2), np.ones((2, 1))])
    value = net.forward(params, np.array([0.6, 0.8]))
    assert value == pytest.approx(np.sqrt(2.0) * 1.4, abs=1e-12)
    assert value == pytest.approx(1.979899, abs=1e-6)


def test_forward_relu_kills_nonpositive_preactivations(rng):
    cfg = net.NetworkConfig(depth=2, width=4, input_dim=4)
    w1 = np.abs(rng.normal(size=(4, 4)))
    params = net.NetworkParams(cfg, [w1, rng.normal(size=(4, 1))])
    u = np.abs(rng.normal(size=4))
    assert net.forward(params, -u) == 0.0


def test_forward_dimension_mismatch():
    params = net.init_symmetric(net.NetworkConfig(2, 4, 4), 0)
    with pytest.raises(net.ConfigError):
        net.forward(params, np.ones(6))
    with pytest.raises(net.ConfigError):
        net.gradient(params, np.ones(2))


def test_forward_many_matches_scalar(rng):
    cfg = net.NetworkConfig(depth=3, width=6, input_dim=4, layer_norm=True)
    params = net.init_symmetric(cfg, 3)
    params.set_flat(params.flat() + 0.1 * rng.normal(size=cfg.num_params))
    batch = rng.normal(size=(5, 4))
    outs = net.forward_many(params, batch)
    for i in range(5):
        assert outs[i] == pytest.approx(net.forward(params, batch[i]), abs=1e-12)


def test_gradient_many_matches_scalar(rng):
    cfg = net.NetworkConfig(depth=3, width=6, input_dim=4, layer_norm=True)
    params = net.init_symmetric(cfg, 5)
    params.set_flat(params.flat() + 0.1 * rng.normal(size=cfg.num_params))
    batch = rng.normal(size=(4, 4))
    grads = net.gradient_many(params, batch)
    for i in range(4):
        assert np.allclose(grads[i], net.gradient(params, batch[i]), atol=1e-12)


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        params, u = sample_fd_case(rng)
        grad = net.gradient(params, u)
        fd = finite_diff_gradient(params, u)
        rel = np.abs(fd - grad).max() / max(np.abs(grad).max(), 1e-12)
        assert rel < 1e-4


def test_gradient_zero_hidden_weights():
    cfg = net.NetworkConfig(depth=2, width=4, input_dim=4)
    params = net.NetworkParams(cfg, [np.zeros((4, 4)), np.ones((4, 1))])
    grad = net.gradient(params, np.ones(4))
    # hidden activations vanish, so the output block's gradient vanishes
    assert np.all(grad[16:] == 0.0)


def test_relu_derivative_at_zero_is_zero():
    cfg = net.NetworkConfig(depth=2, width=2, input_dim=2)
    params = net.NetworkParams(cfg, [np.array([[0.0, 0.0], [1.0, 1.0]]), np.ones((2, 1))])
    grad = net.gradient(params, np.array([1.0, 1.0]))
    # unit 0 has exactly zero preactivation: no gradient flows through it
    assert np.all(grad[:2] == 0.0)


def test_gradient_length_for_various_configs():
    for depth, width, dim in [(2, 4, 2), (3, 6, 4), (4, 4, 6)]:
        cfg = net.NetworkConfig(depth=depth, width=width, input_dim=dim)
        params = net.init_symmetric(cfg, 1)
        assert net.gradient(params, np.ones(dim) / np.sqrt(dim)).shape == (cfg.num_params,)


def test_loss_gradient_vanishes_at_interpolating_init(rng):
    cfg = net.NetworkConfig(depth=2, width=4, input_dim=4)
    params = net.init_symmetric(cfg, 11)
    u = duplicate_transform(unit_sphere_transform(rng.normal(size=2)))
    # f(u) = 0 at init, so reward 0 kills the data term; W = W_init kills the rest
    grad = net.loss_gradient(params, u, reward=0.0, reg=0.5)
    assert np.allclose(grad, 0.0, atol=1e-12)


def test_loss_gradient_without_regularizer(rng):
    params, u = sample_fd_case(rng)
    reward = 0.3
    expect = net.gradient(params, u) * (net.forward(params, u) - reward)
    assert np.allclose(net.loss_gradient(params, u, reward, reg=0.0), expect, atol=1e-12)


def test_loss_gradient_matches_finite_differences(rng):
    for _ in range(5):
        params, u = sample_fd_case(rng)
        grad = net.loss_gradient(params, u, reward=0.7, reg=0.01)
        fd = finite_diff_loss_gradient(params, u, reward=0.7, reg=0.01)
        rel = np.abs(fd - grad).max() / max(np.abs(grad).max(), 1e-12)
        assert rel < 1e-4


def test_batch_loss_gradient_averages_data_term(rng):
    params, _ = sample_fd_case(rng)
    dim = params.config.input_dim
    batch = rng.normal(size=(3, dim))
    rewards = rng.normal(size=3)
    singles = [net.loss_gradient(params, batch[i], rewards[i], reg=0.0) for i in range(3)]
    batched = net.loss_gradient_batch(params, batch, rewards, reg=0.0)
    assert np.allclose(batched, np.mean(singles, axis=0), atol=1e-12)
    # the proximal term is added once, not averaged
    with_reg = net.loss_gradient_batch(params, batch, rewards, reg=0.2)
    drift = params.config.width * 0.2 * (params.flat() - params.flat_init())
    assert np.allclose(with_reg - batched, drift, atol=1e-12)


def test_sgd_zero_learning_rate_is_identity(rng):
    params, _ = sample_fd_case(rng)
    opt = net.make_optimizer("sgd", 0.1, params.num_params)
    before = params.flat()
    net.optimizer_step(params, opt, rng.normal(size=params.num_params), lr=0.0)
    assert np.array_equal(params.flat(), before)
    assert opt.step == 1


def test_sgd_unit_learning_rate_subtracts_gradient(rng):
    params, _ = sample_fd_case(rng)
    opt = net.make_optimizer("sgd", 1.0, params.num_params)
    g = rng.normal(size=params.num_params)
    before = params.flat()
    net.optimizer_step(params, opt, g)
    assert np.array_equal(params.flat(), before - g)


def test_optimizer_rejects_nonpositive_learning_rate():
    with pytest.raises(net.ConfigError):
        net.make_optimizer("sgd", 0.0, 4)
    with pytest.raises(net.ConfigError):
        net.make_optimizer("adam", -1e-3, 4)


def test_adam_first_step_is_sign_like(rng):
    params, _ = sample_fd_case(rng)
    opt = net.make_optimizer("adam", 1e-2, params.num_params)
    g = rng.normal(size=params.num_params)
    before = params.flat()
    net.optimizer_step(params, opt, g)
    expect = before - 1e-2 * g / (np.abs(g) + opt.eps)
    assert np.allclose(params.flat(), expect, atol=1e-12)


def test_adam_matches_hand_rolled_recurrence(rng):
    cfg = net.NetworkConfig(depth=2, width=2, input_dim=2)
    params = net.init_symmetric(cfg, 0)
    opt = net.make_optimizer("adam", 0.05, cfg.num_params, beta1=0.8, beta2=0.95, eps=1e-7)
    theta = params.flat()
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    for step in range(1, 6):
        g = rng.normal(size=theta.size)
        m1 = 0.8 * m1 + 0.2 * g
        m2 = 0.95 * m2 + 0.05 * g * g
        theta = theta - 0.05 * (m1 / (1 - 0.8**step)) / (
            np.sqrt(m2 / (1 - 0.95**step)) + 1e-7
        )
        net.optimizer_step(params, opt, g)
        assert np.allclose(params.flat(), theta, atol=1e-14)


def test_training_trajectory_is_deterministic():
    cfg = net.NetworkConfig(depth=2, width=6, input_dim=4, layer_norm=True)
    stream_rng = np.random.default_rng(9)
    data = [(stream_rng.normal(size=4), float(stream_rng.normal())) for _ in range(10)]

    def run():
        params = net.init_symmetric(cfg, 21)
        opt = net.make_optimizer("adam", 1e-3, cfg.num_params)
        for u, r in data:
            grad = net.loss_gradient(params, u, r, reg=1e-4)
            net.optimizer_step(params, opt, grad)
        return params.flat()

    assert np.array_equal(run(), run())


def test_layer_norm_standardizes_preactivations(rng):
    cfg = net.NetworkConfig(depth=3, width=8, input_dim=4, layer_norm=True)
    params = net.init_symmetric(cfg, 2)
    u = rng.normal(size=(3, 4))
    _, post_norm, _, _ = net._trace(params, u)
    for z in post_norm:
        assert np.allclose(z.mean(axis=1), 0.0, atol=1e-9)
        assert np.allclose(z.var(axis=1), 1.0, atol=1e-3)


def test_checkpoint_roundtrip(tmp_path, rng):
    cfg = net.NetworkConfig(depth=3, width=6, input_dim=4, layer_norm=True)
    params = net.init_symmetric(cfg, 13)
    params.set_flat(params.flat() + rng.normal(size=cfg.num_params))
    path = tmp_path / "weights.bin"
    net.save_params(params, path)
    loaded = net.load_params(path)
    assert loaded.config == cfg
    assert np.array_equal(loaded.flat(), params.flat())
    assert np.array_equal(loaded.flat_init(), params.flat_init())
    with pytest.raises(ValueError):
        path2 = tmp_path / "junk.bin"
        path2.write_bytes(b"not a checkpoint")
        net.load_params(path2)
