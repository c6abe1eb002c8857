"""Decision policies learned from offline logs.

Two families live here.  The trainable family consumes a log sequentially,
taking one (or a replayed batch of) gradient step(s) per record, and scores
actions either pessimistically (prediction minus a weighted covariance bonus
computed from the network gradient as a feature map) or greedily (raw
prediction).  The closed-form family fits ridge or kernel-ridge models once
per dataset: plain linear, linear over frozen network-gradient features, and
an RBF kernel model with a posterior-variance bonus.

All policies resolve exact score ties to the lowest action index, making
every decision rule a deterministic function of its inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import network as net
from .confidence import BetaSchedule, CovarianceState


class Policy:
    """A deterministic decision rule over per-action feature vectors."""

    def scores(self, arms: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def act(self, arms: np.ndarray) -> int:
        """argmax of the scores; ties resolve to the lowest action index."""
        return int(np.argmax(self.scores(arms)))


class GreedyNetPolicy(Policy):
    """Scores are the raw network predictions."""

    def __init__(self, params: net.NetworkParams, step: int = 0):
        self.params = params
        self.step = step

    def scores(self, arms: np.ndarray) -> np.ndarray:
        return net.forward_many(self.params, arms)


class PessimisticNetPolicy(Policy):
    """Prediction minus beta times the covariance bonus of the scaled
    network gradient at each arm."""

    def __init__(
        self,
        params: net.NetworkParams,
        covariance: CovarianceState,
        beta: float,
        step: int = 0,
    ):
        self.params = params
        self.covariance = covariance
        self.beta = beta
        self.step = step

    def scores(self, arms: np.ndarray) -> np.ndarray:
        preds = net.forward_many(self.params, arms)
        if self.beta == 0.0:
            return preds
        feats = net.gradient_many(self.params, arms) / np.sqrt(self.params.config.width)
        return preds - self.beta * self.covariance.bonus_many(feats)


class LinearLCBPolicy(Policy):
    """Ridge scores with an optional elliptic-norm penalty.

    ``feature_fn`` maps an (arms, dim) array to feature rows; None means the
    raw arm vectors are the features.
    """

    def __init__(
        self,
        theta: np.ndarray,
        covariance: CovarianceState | None,
        beta: float,
        feature_fn=None,
    ):
        if beta > 0.0 and covariance is None:
            raise ValueError("a covariance state is required when beta > 0")
        self.theta = theta
        self.covariance = covariance
        self.beta = beta
        self.feature_fn = feature_fn

    def scores(self, arms: np.ndarray) -> np.ndarray:
        feats = arms if self.feature_fn is None else self.feature_fn(arms)
        preds = feats @ self.theta
        if self.beta == 0.0:
            return preds
        return preds - self.beta * self.covariance.bonus_many(feats)


class RBFKernel:
    """k(u, v) = exp(-||u - v||^2 / (2 sigma^2))."""

    def __init__(self, sigma: float):
        if sigma <= 0.0:
            raise ValueError(f"bandwidth must be positive, got {sigma}")
        self.sigma = sigma

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        sq = (
            (a * a).sum(axis=1)[:, None]
            + (b * b).sum(axis=1)[None, :]
            - 2.0 * a @ b.T
        )
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.sigma**2))

    def diag(self, a: np.ndarray) -> np.ndarray:
        return np.ones(a.shape[0])


class LinearKernel:
    """k(u, v) = u . v  (test hook: reduces kernel ridge to plain ridge)."""

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a @ b.T

    def diag(self, a: np.ndarray) -> np.ndarray:
        return (a * a).sum(axis=1)


class KernelLCBPolicy(Policy):
    """Kernel-ridge mean prediction minus beta times the posterior std."""

    def __init__(self, support: np.ndarray, dual: np.ndarray, chol, kernel, beta: float):
        self.support = support
        self.dual = dual
        self._chol = chol  # (factor, lower) of K + lam*I
        self.kernel = kernel
        self.beta = beta

    def predict(self, arms: np.ndarray) -> np.ndarray:
        return self.kernel(arms, self.support) @ self.dual

    def scores(self, arms: np.ndarray) -> np.ndarray:
        kx = self.kernel(arms, self.support)
        preds = kx @ self.dual
        if self.beta == 0.0:
            return preds
        c, lower = self._chol
        half = solve_triangular(c, kx.T, lower=lower)
        variance = self.kernel.diag(arms) - (half * half).sum(axis=0)
        return preds - self.beta * np.sqrt(np.maximum(variance, 0.0))


# ---------------------------------------------------------------------------
# Sequentially trained network policies


def _child_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class TrainSettings:
    """Optimization settings shared by the trainable policies."""

    optimizer: str = "adam"  # "adam" | "sgd"
    learning_rate: float = 1e-3
    lr_decay: str = "constant"  # "constant" | "inv_sqrt"
    reg: float = 1e-4  # strength of the pull toward the initial weights
    train_mode: str = "s"  # "s": one step per record; "b": replayed batches
    batch_size: int = 50
    batch_steps: int = 100
    return_rule: str = "latest"  # "latest" | "ensemble"

    def __post_init__(self):
        if self.train_mode not in ("s", "b"):
            raise net.ConfigError(f"train_mode must be 's' or 'b', got {self.train_mode!r}")
        if self.lr_decay not in ("constant", "inv_sqrt"):
            raise net.ConfigError(f"unknown lr_decay {self.lr_decay!r}")
        if self.return_rule not in ("latest", "ensemble"):
            raise net.ConfigError(f"unknown return_rule {self.return_rule!r}")
        if self.train_mode == "b" and (self.batch_size < 1 or self.batch_steps < 1):
            raise net.ConfigError("batch_size and batch_steps must be >= 1")


class _OnlineNetTrainer:
    """Shared streaming trainer: one record in, one weight refresh out.

    The weight trajectory depends only on the record stream, the seed and the
    settings, never on the decisions the derived policy would make.
    """

    def __init__(self, config: net.NetworkConfig, seed: int, settings: TrainSettings):
        self.config = config
        self.seed = seed
        self.settings = settings
        self.params = net.init_symmetric(
            config, np.random.SeedSequence(entropy=seed, spawn_key=(0,))
        )
        self.opt = net.make_optimizer(
            settings.optimizer, settings.learning_rate, config.num_params,
            l2_reg=settings.reg,
        )
        self._batch_rng = _child_rng(seed, 1)
        self._ensemble_rng = _child_rng(seed, 2)
        self.t = 0
        self._buffer_x: list[np.ndarray] = []
        self._buffer_r: list[float] = []

    def _step_lr(self) -> float:
        base = self.settings.learning_rate
        if self.settings.lr_decay == "inv_sqrt":
            return base / np.sqrt(self.t + 1)
        return base

    def _train_on(self, x: np.ndarray, r: float) -> None:
        lr = self._step_lr()
        if self.settings.train_mode == "s":
            grad = net.loss_gradient(self.params, x, r, self.settings.reg)
            net.optimizer_step(self.params, self.opt, grad, lr=lr)
        else:
            self._buffer_x.append(np.asarray(x, dtype=np.float64))
            self._buffer_r.append(float(r))
            stacked = np.stack(self._buffer_x)
            rewards = np.asarray(self._buffer_r)
            for _ in range(self.settings.batch_steps):
                idx = self._batch_rng.integers(len(self._buffer_x), size=self.settings.batch_size)
                grad = net.loss_gradient_batch(
                    self.params, stacked[idx], rewards[idx], self.settings.reg
                )
                net.optimizer_step(self.params, self.opt, grad, lr=lr)
        self.t += 1

    def policy(self) -> Policy:
        raise NotImplementedError

    def update(self, x: np.ndarray, r: float) -> None:
        raise NotImplementedError

    def step(self, sample) -> Policy:
        """Emit the policy based on the current state, then consume one
        (full context, action, reward) record."""
        arms, action, reward = sample
        pol = self.policy()
        self.update(np.asarray(arms)[int(action)], float(reward))
        return pol

    def run(self, dataset, checkpoints=None):
        """Consume a log in order.

        Without checkpoints, returns the policy selected by the return rule:
        the one emitted at the last record, or a seeded uniform draw from the
        per-record ensemble.  With a sorted iterable of checkpoint sizes,
        returns {size: policy-at-that-size} using the same rule per size.
        """
        n = len(dataset)
        if n == 0:
            raise ValueError("empty dataset")
        if checkpoints is None:
            sizes = [n]
        else:
            sizes = sorted(set(int(c) for c in checkpoints))
            if sizes[0] < 1 or sizes[-1] > n:
                raise ValueError(f"checkpoints must lie in [1, {n}]")
        if self.settings.return_rule == "latest":
            wanted = {size: size for size in sizes}
        else:
            wanted = {
                size: 1 + int(self._ensemble_rng.integers(size)) for size in sizes
            }
        snap_at = {}
        for size, t in wanted.items():
            snap_at.setdefault(t, []).append(size)
        out: dict[int, Policy] = {}
        for t in range(1, sizes[-1] + 1):
            if t in snap_at:
                pol = self.policy()
                for size in snap_at[t]:
                    out[size] = pol
            self.update(dataset.contexts[t - 1][dataset.actions[t - 1]],
                        float(dataset.rewards[t - 1]))
        if checkpoints is None:
            return out[n]
        return out


class NeuralLCB(_OnlineNetTrainer):
    """Streaming pessimistic learner.

    Per record: emit the pessimistic policy from the pre-update weights and
    covariance, then fold the scaled gradient at the logged action into the
    covariance and take the optimizer step(s) on the proximal squared loss.
    The emitted policy therefore never uses the record it is scored against.
    """

    def __init__(
        self,
        config: net.NetworkConfig,
        seed: int,
        lam: float = 0.1,
        beta: BetaSchedule | float = 0.05,
        cov_mode: str = "diag",
        settings: TrainSettings = TrainSettings(),
    ):
        super().__init__(config, seed, settings)
        if isinstance(beta, (int, float)):
            beta = BetaSchedule.constant(float(beta))
        self.beta_schedule = beta
        self.covariance = CovarianceState(config.num_params, lam, mode=cov_mode)

    def policy(self) -> PessimisticNetPolicy:
        return PessimisticNetPolicy(
            params=self.params.copy(),
            covariance=self.covariance.copy(),
            beta=self.beta_schedule.at(self.covariance.t),
            step=self.t,
        )

    def update(self, x: np.ndarray, r: float) -> None:
        x = np.asarray(x, dtype=np.float64)
        feat = net.gradient(self.params, x) / np.sqrt(self.config.width)
        self.covariance.update(feat)
        self._train_on(x, r)


class NeuralGreedy(_OnlineNetTrainer):
    """Same trainer as :class:`NeuralLCB`, greedy decisions, no covariance."""

    def __init__(self, config: net.NetworkConfig, seed: int,
                 settings: TrainSettings = TrainSettings()):
        super().__init__(config, seed, settings)

    def policy(self) -> GreedyNetPolicy:
        return GreedyNetPolicy(params=self.params.copy(), step=self.t)

    def update(self, x: np.ndarray, r: float) -> None:
        self._train_on(np.asarray(x, dtype=np.float64), r)


def neuralcb_run(dataset, config: net.NetworkConfig, seed: int, **kwargs) -> Policy:
    """Fit a pessimistic network policy over a log; see :class:`NeuralLCB`."""
    return NeuralLCB(config, seed, **kwargs).run(dataset)


def neural_greedy_run(dataset, config: net.NetworkConfig, seed: int,
                      settings: TrainSettings = TrainSettings()) -> Policy:
    return NeuralGreedy(config, seed, settings=settings).run(dataset)


# ---------------------------------------------------------------------------
# Closed-form baselines


def linlcb_fit(dataset, lam: float, beta: float) -> LinearLCBPolicy:
    """Ridge fit on the logged action features with an elliptic-norm penalty."""
    x = dataset.chosen_features()
    cov = CovarianceState.from_rows(lam, x, mode="full")
    theta = cov.solve(x.T @ dataset.rewards)
    return LinearLCBPolicy(theta=theta, covariance=cov, beta=beta)


def neurallin_fit(
    dataset,
    lam: float,
    beta: float,
    init_params: net.NetworkParams,
    greedy: bool = False,
    cov_mode: str = "auto",
    diag_threshold: int = 10_000,
) -> LinearLCBPolicy:
    """Ridge fit over frozen network-gradient features.

    The feature map is the flattened weight gradient of the untrained
    network; ``greedy=True`` drops the penalty.  ``cov_mode='auto'`` keeps
    the dense covariance up to ``diag_threshold`` features and switches to
    the diagonal approximation beyond it.
    """
    p = init_params.num_params
    if cov_mode == "auto":
        cov_mode = "full" if p <= diag_threshold else "diag"

    frozen = init_params.copy()

    def feature_fn(arms: np.ndarray) -> np.ndarray:
        return net.gradient_many(frozen, arms)

    feats = feature_fn(dataset.chosen_features())
    cov = CovarianceState.from_rows(lam, feats, mode=cov_mode)
    theta = cov.solve(feats.T @ dataset.rewards)
    return LinearLCBPolicy(
        theta=theta,
        covariance=cov,
        beta=0.0 if greedy else beta,
        feature_fn=feature_fn,
    )


def kernlcb_fit(
    dataset,
    lam: float,
    beta: float,
    sigma: float = 1.0,
    cap: int = 1000,
    kernel=None,
) -> KernelLCBPolicy:
    """Kernel-ridge fit on at most the first ``cap`` records.

    Uses the RBF kernel with bandwidth ``sigma`` unless an explicit kernel
    object is supplied.  Scores subtract beta times the posterior standard
    deviation sqrt(k(u,u) - k_n(u)^T (K + lam I)^{-1} k_n(u)).
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    if kernel is None:
        kernel = RBFKernel(sigma)
    used = dataset.prefix(min(len(dataset), cap))
    support = used.chosen_features().copy()
    gram = kernel(support, support)
    chol = cho_factor(gram + lam * np.eye(gram.shape[0]), lower=True)
    dual = cho_solve(chol, used.rewards)
    return KernelLCBPolicy(support=support, dual=dual, chol=chol, kernel=kernel, beta=beta)


class LinUCB:
    """Incremental optimistic ridge learner used to collect dependent logs."""

    def __init__(self, dim: int, lam: float = 0.1, alpha: float = 1.0):
        if lam <= 0.0:
            raise ValueError(f"regularizer must be positive, got {lam}")
        self.dim = dim
        self.alpha = alpha
        self.cov = CovarianceState(dim, lam, mode="full")
        self.b = np.zeros(dim)

    def update(self, x: np.ndarray, r: float) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.cov.update(x)
        self.b += r * x

    def act(self, arms: np.ndarray) -> int:
        return int(np.argmax(self.scores(arms)))

    def scores(self, arms: np.ndarray) -> np.ndarray:
        arms = np.asarray(arms, dtype=np.float64)
        theta = self.cov.solve(self.b)
        return arms @ theta + self.alpha * self.cov.bonus_many(arms)


def linucb_act(history, arms: np.ndarray, lam: float = 0.1, alpha: float = 1.0) -> int:
    """Optimistic ridge action from an explicit (x, r) history; fresh state
    when the history is empty."""
    dim = np.asarray(arms).shape[1]
    learner = LinUCB(dim, lam=lam, alpha=alpha)
    for x, r in history:
        learner.update(x, r)
    return learner.act(arms)


# ---------------------------------------------------------------------------
# Trainer checkpointing (resumable runs)

_STATE_MAGIC = b"BLSTATE1"


def save_trainer(trainer: _OnlineNetTrainer, path) -> None:
    """Serialize a streaming trainer: settings, weights, optimizer moments,
    covariance, replay buffer and generator states."""
    meta = {
        "kind": "lcb" if isinstance(trainer, NeuralLCB) else "greedy",
        "seed": trainer.seed,
        "t": trainer.t,
        "config": {
            "depth": trainer.config.depth,
            "width": trainer.config.width,
            "input_dim": trainer.config.input_dim,
            "layer_norm": trainer.config.layer_norm,
        },
        "settings": trainer.settings.__dict__,
        "opt_step": trainer.opt.step,
        "batch_rng": trainer._batch_rng.bit_generator.state,
        "ensemble_rng": trainer._ensemble_rng.bit_generator.state,
    }
    arrays = {
        "flat": trainer.params.flat(),
        "flat_init": np.asarray(trainer.params.flat_init()),
        "buffer_x": np.stack(trainer._buffer_x) if trainer._buffer_x else np.zeros((0, trainer.config.input_dim)),
        "buffer_r": np.asarray(trainer._buffer_r),
    }
    if trainer.opt.kind == "adam":
        arrays["m1"] = trainer.opt.m1
        arrays["m2"] = trainer.opt.m2
    if isinstance(trainer, NeuralLCB):
        meta["lam"] = trainer.covariance.lam
        meta["cov_mode"] = trainer.covariance.mode
        meta["cov_t"] = trainer.covariance.t
        meta["beta"] = trainer.beta_schedule.__dict__ | {}
        if trainer.covariance.mode == "full":
            arrays["cov"] = trainer.covariance.matrix
        else:
            arrays["cov"] = trainer.covariance.diag
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_STATE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        np.savez(fh, **arrays)


def load_trainer(path) -> _OnlineNetTrainer:
    with open(path, "rb") as fh:
        if fh.read(len(_STATE_MAGIC)) != _STATE_MAGIC:
            raise ValueError(f"{path}: not a trainer checkpoint")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(blob_len).decode())
        arrays = np.load(fh)
        config = net.NetworkConfig(**meta["config"])
        settings = TrainSettings(**meta["settings"])
        if meta["kind"] == "lcb":
            beta = BetaSchedule(**meta["beta"])
            trainer = NeuralLCB(
                config, meta["seed"], lam=meta["lam"], beta=beta,
                cov_mode=meta["cov_mode"], settings=settings,
            )
            if trainer.covariance.mode == "full":
                trainer.covariance.matrix = arrays["cov"].copy()
                trainer.covariance._chol = None
            else:
                trainer.covariance.diag = arrays["cov"].copy()
            trainer.covariance.t = meta["cov_t"]
        else:
            trainer = NeuralGreedy(config, meta["seed"], settings=settings)
        trainer.params.set_flat(arrays["flat"])
        trainer.params._init_flat = arrays["flat_init"].copy()
        trainer.params._init_flat.setflags(write=False)
        offset = 0
        rebuilt = []
        for shape in config.layer_shapes():
            size = shape[0] * shape[1]
            block = trainer.params._init_flat[offset : offset + size].reshape(shape).copy()
            block.setflags(write=False)
            rebuilt.append(block)
            offset += size
        trainer.params.init_layers = rebuilt
        trainer.t = meta["t"]
        trainer.opt.step = meta["opt_step"]
        if trainer.opt.kind == "adam":
            trainer.opt.m1 = arrays["m1"].copy()
            trainer.opt.m2 = arrays["m2"].copy()
        trainer._batch_rng.bit_generator.state = meta["batch_rng"]
        trainer._ensemble_rng.bit_generator.state = meta["ensemble_rng"]
        if arrays["buffer_r"].shape[0]:
            trainer._buffer_x = [row.copy() for row in arrays["buffer_x"]]
            trainer._buffer_r = [float(r) for r in arrays["buffer_r"]]
    return trainer
