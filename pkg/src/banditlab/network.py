"""Fully connected ReLU networks with exact manual backpropagation.

The scalar-output network is

    f(u) = sqrt(m) * w_out . relu(W_{L-1} relu(... relu(W_1 u)))

with an antisymmetric initialization: every hidden matrix is block-diagonal
with two copies of a half-width Gaussian draw, and the output vector is a
Gaussian half stacked against its negation.  On inputs whose first and second
halves coincide the two branches cancel exactly, so the freshly initialized
network is the zero function there.

Everything is plain float64 numpy; gradients are flattened layer by layer in
row-major order, which is also the order used by the covariance machinery in
:mod:`banditlab.confidence`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

LAYER_NORM_EPS = 1e-5

_CHECKPOINT_MAGIC = b"BLNET1\x00\x00"


class ConfigError(ValueError):
    """An invalid network or optimizer configuration."""


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of the scalar-output ReLU network.

    ``width`` and ``input_dim`` must be even so the initialization can split
    each matrix into two identical blocks.
    """

    depth: int
    width: int
    input_dim: int
    layer_norm: bool = False

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2, got {self.depth}")
        if self.width < 2 or self.width % 2 != 0:
            raise ConfigError(f"width must be an even integer >= 2, got {self.width}")
        if self.input_dim < 2 or self.input_dim % 2 != 0:
            raise ConfigError(
                f"input_dim must be an even integer >= 2, got {self.input_dim}"
            )

    @property
    def num_params(self) -> int:
        """Total parameter count m*d + m + m^2*(depth-2)."""
        m, d = self.width, self.input_dim
        return m * d + m + m * m * (self.depth - 2)

    def layer_shapes(self) -> list[tuple[int, int]]:
        m, d = self.width, self.input_dim
        shapes = [(m, d)]
        shapes += [(m, m)] * (self.depth - 2)
        shapes.append((m, 1))
        return shapes


class NetworkParams:
    """Weights of a network plus a frozen copy of their initial values.

    The frozen copy anchors the proximal term of the training loss and the
    feature map used by the frozen-feature linear baselines; it is never
    mutated after construction.
    """

    def __init__(self, config: NetworkConfig, layers: list[np.ndarray]):
        expected = config.layer_shapes()
        got = [w.shape for w in layers]
        if got != expected:
            raise ConfigError(f"layer shapes {got} do not match config {expected}")
        self.config = config
        self.layers = [np.array(w, dtype=np.float64) for w in layers]
        self.init_layers = [w.copy() for w in self.layers]
        for w in self.init_layers:
            w.setflags(write=False)
        self._init_flat = np.concatenate([w.ravel() for w in self.init_layers])
        self._init_flat.setflags(write=False)

    @property
    def num_params(self) -> int:
        return self.config.num_params

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layers])

    def flat_init(self) -> np.ndarray:
        return self._init_flat

    def set_flat(self, values: np.ndarray) -> None:
        if values.shape != (self.num_params,):
            raise ConfigError(
                f"expected flat vector of length {self.num_params}, got {values.shape}"
            )
        offset = 0
        for w in self.layers:
            w[...] = values[offset : offset + w.size].reshape(w.shape)
            offset += w.size

    def copy(self) -> "NetworkParams":
        dup = NetworkParams.__new__(NetworkParams)
        dup.config = self.config
        dup.layers = [w.copy() for w in self.layers]
        dup.init_layers = self.init_layers
        dup._init_flat = self._init_flat
        return dup


def init_symmetric(config: NetworkConfig, seed) -> NetworkParams:
    """Draw initial weights with the cancelling two-block structure.

    Hidden blocks are i.i.d. N(0, 4/m); the output half is i.i.d. N(0, 2/m)
    and stacked as [w, -w].  Deterministic for a fixed seed (an integer or a
    numpy SeedSequence).
    """
    if isinstance(seed, (int, np.integer)):
        seed = np.random.SeedSequence(seed)
    rng = np.random.default_rng(seed)
    m, d = config.width, config.input_dim
    layers = []
    block = rng.normal(0.0, np.sqrt(4.0 / m), size=(m // 2, d // 2))
    first = np.zeros((m, d))
    first[: m // 2, : d // 2] = block
    first[m // 2 :, d // 2 :] = block
    layers.append(first)
    for _ in range(config.depth - 2):
        block = rng.normal(0.0, np.sqrt(4.0 / m), size=(m // 2, m // 2))
        hidden = np.zeros((m, m))
        hidden[: m // 2, : m // 2] = block
        hidden[m // 2 :, m // 2 :] = block
        layers.append(hidden)
    w = rng.normal(0.0, np.sqrt(2.0 / m), size=m // 2)
    layers.append(np.concatenate([w, -w]).reshape(m, 1))
    return NetworkParams(config, layers)


def _trace(params: NetworkParams, inputs: np.ndarray):
    """Forward pass keeping what the backward pass needs.

    Returns (activations, post_norm, inv_std, outputs) where ``activations``
    holds the input batch followed by each hidden activation, ``post_norm``
    the normalized pre-activations (equal to the raw ones when layer norm
    is off) and ``inv_std`` the per-row 1/sqrt(var + eps) factors (None
    entries when layer norm is off).
    """
    cfg = params.config
    acts = [inputs]
    post_norm = []
    inv_std = []
    a = inputs
    for w in params.layers[:-1]:
        z = a @ w.T
        if cfg.layer_norm:
            mu = z.mean(axis=1, keepdims=True)
            var = z.var(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
            z = (z - mu) * inv
            inv_std.append(inv)
        else:
            inv_std.append(None)
        post_norm.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    out = np.sqrt(cfg.width) * (a @ params.layers[-1][:, 0])
    return acts, post_norm, inv_std, out


def forward_many(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch of rows; returns shape (batch,)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.config.input_dim:
        raise ConfigError(
            f"expected inputs of shape (batch, {params.config.input_dim}), got {inputs.shape}"
        )
    return _trace(params, inputs)[3]


def forward(params: NetworkParams, u: np.ndarray) -> float:
    """Evaluate the network on a single input vector."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (params.config.input_dim,):
        raise ConfigError(
            f"expected input of length {params.config.input_dim}, got shape {u.shape}"
        )
    return float(forward_many(params, u[None, :])[0])


def _backward(params: NetworkParams, acts, post_norm, inv_std) -> np.ndarray:
    """Per-sample weight gradients, flattened to shape (batch, num_params)."""
    cfg = params.config
    batch = acts[0].shape[0]
    m = cfg.width
    pieces = [None] * cfg.depth
    pieces[-1] = np.sqrt(m) * acts[-1]
    g = np.broadcast_to(np.sqrt(m) * params.layers[-1][:, 0], (batch, m)).copy()
    for l in range(cfg.depth - 2, -1, -1):
        zhat = post_norm[l]
        gz = np.where(zhat > 0.0, g, 0.0)
        if cfg.layer_norm:
            inv = inv_std[l]
            gz = inv * (
                gz
                - gz.mean(axis=1, keepdims=True)
                - zhat * (gz * zhat).mean(axis=1, keepdims=True)
            )
        pieces[l] = np.einsum("bi,bj->bij", gz, acts[l]).reshape(batch, -1)
        g = gz @ params.layers[l]
    return np.concatenate(pieces, axis=1)


def gradient_many(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Exact weight gradient of each row's output; shape (batch, num_params).

    The ReLU derivative at exactly zero is taken to be zero.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.config.input_dim:
        raise ConfigError(
            f"expected inputs of shape (batch, {params.config.input_dim}), got {inputs.shape}"
        )
    acts, post_norm, inv_std, _ = _trace(params, inputs)
    return _backward(params, acts, post_norm, inv_std)


def gradient(params: NetworkParams, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return gradient_many(params, u[None, :])[0]


def loss_gradient(
    params: NetworkParams, u: np.ndarray, reward: float, reg: float
) -> np.ndarray:
    """Gradient of 0.5*(f(u) - r)^2 + (m*reg/2)*||W - W_init||_F^2, flattened."""
    u = np.asarray(u, dtype=np.float64)
    acts, post_norm, inv_std, out = _trace(params, u[None, :])
    grad = _backward(params, acts, post_norm, inv_std)[0]
    total = grad * (out[0] - reward)
    if reg != 0.0:
        total += (params.config.width * reg) * (params.flat() - params.flat_init())
    return total


def loss_gradient_batch(
    params: NetworkParams, inputs: np.ndarray, rewards: np.ndarray, reg: float
) -> np.ndarray:
    """Gradient of the batch loss: mean squared-error term plus the full
    proximal term (the regularizer is not averaged over the batch)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    acts, post_norm, inv_std, out = _trace(params, inputs)
    grads = _backward(params, acts, post_norm, inv_std)
    total = grads.T @ (out - rewards) / inputs.shape[0]
    if reg != 0.0:
        total += (params.config.width * reg) * (params.flat() - params.flat_init())
    return total


@dataclass
class OptimizerState:
    """State of a first-order optimizer acting on the flattened weights."""

    kind: str  # "sgd" | "adam"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2_reg: float = 0.0
    step: int = 0
    m1: np.ndarray | None = None
    m2: np.ndarray | None = None

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            kind=self.kind,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            l2_reg=self.l2_reg,
            step=self.step,
            m1=None if self.m1 is None else self.m1.copy(),
            m2=None if self.m2 is None else self.m2.copy(),
        )


def make_optimizer(
    kind: str,
    learning_rate: float,
    num_params: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    l2_reg: float = 0.0,
) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    if learning_rate <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {learning_rate}")
    state = OptimizerState(
        kind=kind, learning_rate=learning_rate, beta1=beta1, beta2=beta2,
        eps=eps, l2_reg=l2_reg,
    )
    if kind == "adam":
        state.m1 = np.zeros(num_params)
        state.m2 = np.zeros(num_params)
    return state


def optimizer_step(
    params: NetworkParams,
    opt: OptimizerState,
    grad: np.ndarray,
    lr: float | None = None,
) -> tuple[NetworkParams, OptimizerState]:
    """Apply one SGD or bias-corrected Adam update in place.

    ``lr`` overrides the state's base learning rate for this step, which is
    how per-step schedules such as eta/sqrt(t) are driven by the caller.
    """
    if grad.shape != (params.num_params,):
        raise ConfigError(
            f"gradient length {grad.shape} does not match parameter count {params.num_params}"
        )
    eta = opt.learning_rate if lr is None else lr
    if eta < 0.0:
        raise ConfigError(f"learning rate must be nonnegative, got {eta}")
    opt.step += 1
    flat = params.flat()
    if opt.kind == "sgd":
        flat -= eta * grad
    else:
        opt.m1 = opt.beta1 * opt.m1 + (1.0 - opt.beta1) * grad
        opt.m2 = opt.beta2 * opt.m2 + (1.0 - opt.beta2) * grad * grad
        m_hat = opt.m1 / (1.0 - opt.beta1**opt.step)
        v_hat = opt.m2 / (1.0 - opt.beta2**opt.step)
        flat -= eta * m_hat / (np.sqrt(v_hat) + opt.eps)
    params.set_flat(flat)
    return params, opt


def save_params(params: NetworkParams, path) -> None:
    """Write a checkpoint: magic, header (depth, width, input_dim, layer-norm
    flag) as little-endian uint32, then the current and initial weights as two
    flat little-endian float64 arrays."""
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<4I", cfg.depth, cfg.width, cfg.input_dim, int(cfg.layer_norm)
            )
        )
        fh.write(params.flat().astype("<f8").tobytes())
        fh.write(params.flat_init().astype("<f8").tobytes())


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        depth, width, input_dim, ln = struct.unpack("<4I", fh.read(16))
        cfg = NetworkConfig(depth=depth, width=width, input_dim=input_dim,
                            layer_norm=bool(ln))
        p = cfg.num_params
        current = np.frombuffer(fh.read(8 * p), dtype="<f8").astype(np.float64)
        initial = np.frombuffer(fh.read(8 * p), dtype="<f8").astype(np.float64)
    shapes = cfg.layer_shapes()
    layers = []
    offset = 0
    for shape in shapes:
        size = shape[0] * shape[1]
        layers.append(initial[offset : offset + size].reshape(shape))
        offset += size
    params = NetworkParams(cfg, layers)
    params.set_flat(current)
    return params
