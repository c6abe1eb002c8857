"""Shared test oracles: finite differences and safe-case sampling."""

import numpy as np
import pytest

from banditlab import network as net


def flat_loss(params, u, reward, reg):
    """Scalar proximal squared loss evaluated from scratch."""
    f = net.forward(params, u)
    data = 0.5 * (f - reward) ** 2
    drift = params.flat() - params.flat_init()
    return data + 0.5 * params.config.width * reg * float(drift @ drift)


def finite_diff_gradient(params, u, h=1e-3):
    """Central-difference gradient of forward() over every weight."""
    base = params.flat()
    out = np.empty_like(base)
    probe = params.copy()
    for j in range(base.size):
        shifted = base.copy()
        shifted[j] = base[j] + h
        probe.set_flat(shifted)
        hi = net.forward(probe, u)
        shifted[j] = base[j] - h
        probe.set_flat(shifted)
        lo = net.forward(probe, u)
        out[j] = (hi - lo) / (2.0 * h)
    return out


def finite_diff_loss_gradient(params, u, reward, reg, h=1e-3):
    base = params.flat()
    out = np.empty_like(base)
    probe = params.copy()
    for j in range(base.size):
        shifted = base.copy()
        shifted[j] = base[j] + h
        probe.set_flat(shifted)
        hi = flat_loss(probe, u, reward, reg)
        shifted[j] = base[j] - h
        probe.set_flat(shifted)
        lo = flat_loss(probe, u, reward, reg)
        out[j] = (hi - lo) / (2.0 * h)
    return out


def min_preactivation_gap(params, u):
    """Smallest |post-normalization preactivation| across hidden units.

    Finite differences are invalid across ReLU kinks, so gradient-check
    cases must keep every unit at least a step-width away from zero.
    """
    _, post_norm, _, _ = net._trace(params, np.asarray(u, dtype=np.float64)[None, :])
    return min(float(np.abs(z).min()) for z in post_norm)


def sample_fd_case(rng, kink_margin=2e-2, perturb_scale=0.5):
    """A random (params, input) pair safely away from ReLU kinks.

    Weights start from the two-block initialization and get a dense Gaussian
    perturbation so the case exercises generic (non-block) weights too.
    """
    while True:
        depth = int(rng.integers(2, 4))
        width = int(2 * rng.integers(2, 9))
        dim = int(2 * rng.integers(1, 5))
        layer_norm = bool(rng.integers(2))
        cfg = net.NetworkConfig(depth=depth, width=width, input_dim=dim, layer_norm=layer_norm)
        params = net.init_symmetric(cfg, int(rng.integers(2**31)))
        flat = params.flat()
        flat += perturb_scale * rng.normal(size=flat.size) / np.sqrt(cfg.width)
        params.set_flat(flat)
        u = rng.normal(size=dim)
        u /= np.linalg.norm(u)
        if min_preactivation_gap(params, u) > kink_margin:
            return params, u


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
