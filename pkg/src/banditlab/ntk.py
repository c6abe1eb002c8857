"""Infinite-width kernel diagnostics for the ReLU networks.

The Gram recursion propagates pairwise second moments of pre-activations
through the depth of the network using closed-form bivariate-Gaussian ReLU
expectations: for covariance [[s1, c], [c, s2]] and rho = c/sqrt(s1*s2),

    E[relu(u) relu(v)]   = sqrt(s1*s2)/(2*pi) * (sqrt(1-rho^2) + rho*(pi - arccos(rho)))
    E[relu'(u) relu'(v)] = (pi - arccos(rho)) / (2*pi)

The module also exposes the smallest eigenvalue of the resulting matrix and
a log-det effective dimension, plus the finite-width gradient Gram used to
probe convergence toward the kernel as the width grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as net

RHO_TOLERANCE = 1e-9


@dataclass
class NtkGram:
    """Kernel Gram matrix over a context set, with optional per-layer
    second-moment and accumulator matrices."""

    matrix: np.ndarray
    depth: int
    moments: list[np.ndarray] | None = None  # per-layer pairwise moments
    accumulators: list[np.ndarray] | None = None  # per-layer running kernels


def _relu_moments(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(2*E[relu(u)relu(v)], 2*E[relu'(u)relu'(v)]) for the moment matrix."""
    s = np.sqrt(np.diag(sigma))
    denom = np.outer(s, s)
    rho = sigma / denom
    bad = np.abs(rho) - 1.0
    if np.any(bad > RHO_TOLERANCE):
        raise ValueError(
            f"pairwise correlation leaves [-1, 1] by {bad.max():.3e}, "
            f"beyond the {RHO_TOLERANCE} clamp band"
        )
    rho = np.clip(rho, -1.0, 1.0)
    angle = np.pi - np.arccos(rho)
    doubled_ss = (denom / np.pi) * (np.sqrt(np.maximum(1.0 - rho * rho, 0.0)) + rho * angle)
    doubled_dd = angle / np.pi
    return doubled_ss, doubled_dd


def ntk_gram(contexts: np.ndarray, depth: int, keep_layers: bool = False) -> NtkGram:
    """Run the depth-wise Gram recursion over unit-norm context vectors.

    The returned matrix is the average of the final accumulator and the final
    moment matrix.  Inputs must be unit vectors (checked to 1e-9).
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.ndim != 2:
        raise ValueError(f"expected a (count, dim) array, got shape {contexts.shape}")
    if depth < 2:
        raise ValueError(f"depth must be >= 2, got {depth}")
    norms = np.linalg.norm(contexts, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("context vectors must have unit Euclidean norm")
    sigma = contexts @ contexts.T
    acc = sigma.copy()
    moments = [sigma.copy()] if keep_layers else None
    accumulators = [acc.copy()] if keep_layers else None
    for _ in range(depth - 1):
        doubled_ss, doubled_dd = _relu_moments(sigma)
        sigma = doubled_ss
        acc = acc * doubled_dd + sigma
        if keep_layers:
            moments.append(sigma.copy())
            accumulators.append(acc.copy())
    return NtkGram(
        matrix=(acc + sigma) / 2.0,
        depth=depth,
        moments=moments,
        accumulators=accumulators,
    )


def min_eigenvalue(matrix: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(matrix)[0])


def effective_dim(matrix: np.ndarray, lam: float, n: int, num_actions: int) -> float:
    """log det(I + H/lam) / log(1 + n*K/lam), log-det via Cholesky pivots."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if lam <= 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    count = n * num_actions
    if matrix.shape != (count, count):
        raise ValueError(
            f"matrix shape {matrix.shape} does not match n*K = {count}"
        )
    chol = np.linalg.cholesky(np.eye(count) + matrix / lam)
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    return float(log_det / np.log(1.0 + count / lam))


def empirical_gram(init: net.NetworkParams, contexts: np.ndarray) -> np.ndarray:
    """Width-normalized gradient Gram <grad f(x_i), grad f(x_j)> / m.

    At a fresh two-block initialization this approaches the infinite-width
    kernel of the same contexts as the width grows.
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    feats = net.gradient_many(init, contexts)
    return (feats @ feats.T) / init.config.width
