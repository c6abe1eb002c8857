"""Experiment orchestration: seeded trials, sweeps, reports, and charts.

A run is a pure function of its configuration.  One bandit instance and one
shared test-context set are fixed per run; each trial redraws the offline
log and the learner initializations from per-trial seed streams.  Online
algorithms continue training across the sample-size grid while closed-form
algorithms refit from scratch at every grid point.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import network as net
from .bandits import (
    BanditInstance,
    ClassificationBandit,
    MushroomBandit,
    gaussian_blobs,
    make_synthetic_bandit,
    pad_to_even,
    prepare_features,
)
from .confidence import BetaSchedule
from .data import (
    OfflineDataset,
    collect_adaptive,
    collect_eps_greedy,
    load_table,
)
from .policies import (
    NeuralGreedy,
    NeuralLCB,
    Policy,
    TrainSettings,
    kernlcb_fit,
    linlcb_fit,
    neurallin_fit,
)

ALGO_IDS = (
    "neuralcb",
    "neuralgreedy",
    "linlcb",
    "kernlcb",
    "neurallinlcb",
    "neurallingreedy",
)

# spawn keys of the named seed streams; trial streams append the trial index
_KEY_INSTANCE = 10
_KEY_EVAL = 11
_KEY_SEARCH = 12
_KEY_COLLECT = 13
_KEY_ALGO = 14


class ConfigError(ValueError):
    """An invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on, seeds included."""

    bandit: str = "h1"  # h1 | h2 | h3 | blobs | classify | mushroom
    algos: tuple[str, ...] = ("neuralcb",)
    horizon: int = 2000  # largest offline-log size
    n_grid: tuple[int, ...] | None = None  # defaults to (horizon,)
    trials: int = 5
    n_te: int = 2000  # test contexts per run
    seed: int = 0

    # environment
    context_dim: int = 10  # per-arm dimension for synthetic bandits
    num_actions: int = 5
    noise_std: float = 0.1
    blob_classes: int = 3
    blob_samples: int = 3000
    blob_noise: float = 0.1
    data_path: str | None = None  # classify/mushroom CSV
    schema: str | None = None
    has_header: bool = False
    edible_label: str = "e"

    # collection
    collect: str = "eps"  # "eps" | "adaptive"
    collect_eps: float = 0.1
    linucb_alpha: float = 1.0
    linucb_lam: float = 0.1

    # model hyperparameters
    depth: int = 2
    width: int = 20
    layer_norm: bool = True
    lam: float = 0.1
    beta: float = 0.05
    eta: float = 1e-3
    reg: float = 1e-4
    sigma: float = 1.0
    kern_cap: int = 1000
    mode: str = "s"
    batch_size: int = 50
    batch_steps: int = 100
    return_rule: str = "latest"
    cov_mode: str = "diag"
    optimizer: str = "adam"

    # search grids
    beta_grid: tuple[float, ...] = (0.01, 0.05, 0.1, 1.0, 5.0, 10.0)
    sigma_grid: tuple[float, ...] = (0.1, 1.0, 10.0)
    eta_grid: tuple[float, ...] = (1e-4, 1e-3)
    mode_grid: tuple[str, ...] = ("s",)

    # plumbing
    out_dir: str | None = None
    measure_time: bool = False
    eval_chunk: int = 4096

    def grid(self) -> tuple[int, ...]:
        return self.n_grid if self.n_grid is not None else (self.horizon,)

    def validate(self) -> None:
        if self.bandit not in ("h1", "h2", "h3", "blobs", "classify", "mushroom"):
            raise ConfigError(f"unknown bandit {self.bandit!r}")
        unknown = [a for a in self.algos if a not in ALGO_IDS]
        if unknown:
            raise ConfigError(f"unknown algorithms {unknown}; choose from {ALGO_IDS}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.n_te < 1:
            raise ConfigError(f"n_te must be >= 1, got {self.n_te}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        grid = self.grid()
        if list(grid) != sorted(set(grid)):
            raise ConfigError(f"n_grid must be strictly increasing, got {grid}")
        if grid[0] < 1 or grid[-1] > self.horizon:
            raise ConfigError(f"n_grid must lie in [1, horizon={self.horizon}]")
        if self.collect not in ("eps", "adaptive"):
            raise ConfigError(f"unknown collection policy {self.collect!r}")
        if not 0.0 <= self.collect_eps <= 1.0:
            raise ConfigError(f"collect_eps must lie in [0, 1], got {self.collect_eps}")
        if self.mode not in ("s", "b"):
            raise ConfigError(f"mode must be 's' or 'b', got {self.mode!r}")
        if self.bandit in ("classify", "mushroom") and not self.data_path:
            raise ConfigError(f"bandit {self.bandit!r} requires data_path")
        for name in ("lam", "eta", "sigma"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")


@dataclass
class ReportRow:
    algo: str
    n: int
    mean: float
    half_width: float
    trials: int
    seconds: float


@dataclass
class SubOptReport:
    """Across-trial mean sub-optimality with 95% confidence half-widths."""

    bandit: str
    rows: list[ReportRow] = field(default_factory=list)

    def mean_at(self, algo: str, n: int) -> float:
        for row in self.rows:
            if row.algo == algo and row.n == n:
                return row.mean
        raise KeyError(f"no row for ({algo}, {n})")


def _child_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def make_bandit(config: ExperimentConfig) -> BanditInstance:
    """Instantiate the configured environment from the instance seed stream."""
    instance_seed = np.random.SeedSequence(
        entropy=config.seed, spawn_key=(_KEY_INSTANCE,)
    ).generate_state(1)[0]
    if config.bandit in ("h1", "h2", "h3"):
        return make_synthetic_bandit(
            config.bandit,
            config.context_dim,
            config.num_actions,
            seed=int(instance_seed),
            noise_std=config.noise_std,
        )
    if config.bandit == "blobs":
        features, labels = gaussian_blobs(
            config.blob_classes,
            config.context_dim,
            config.blob_samples,
            seed=int(instance_seed),
            noise_std=config.blob_noise,
        )
        return ClassificationBandit(features, labels, config.blob_classes)
    if config.schema is None:
        raise ConfigError(f"bandit {config.bandit!r} requires a column schema")
    table = load_table(config.data_path, config.schema, has_header=config.has_header)
    features = pad_to_even(prepare_features(table.features))
    if config.bandit == "classify":
        return ClassificationBandit(features, table.labels, table.num_classes)
    if config.edible_label not in table.label_values:
        raise ConfigError(
            f"edible label {config.edible_label!r} not among {table.label_values}"
        )
    edible = table.labels == table.label_values.index(config.edible_label)
    return MushroomBandit(features, edible)


def sample_eval_set(
    instance: BanditInstance, n_te: int, seed
) -> tuple[np.ndarray, np.ndarray]:
    """n_te full contexts with true means: arrays (n_te, K, D) and (n_te, K)."""
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    arms = np.empty((n_te, instance.num_actions, instance.dim))
    means = np.empty((n_te, instance.num_actions))
    for i in range(n_te):
        cs = instance.sample_contexts(rng)
        arms[i] = cs.arms
        means[i] = cs.means
    return arms, means


def policy_actions(policy: Policy, arms: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Chosen action per context, batching the score computation."""
    n, k, d = arms.shape
    flat = arms.reshape(n * k, d)
    scores = np.empty(n * k)
    for start in range(0, n * k, max(chunk, k)):
        stop = min(start + max(chunk, k), n * k)
        scores[start:stop] = policy.scores(flat[start:stop])
    return scores.reshape(n, k).argmax(axis=1)


def evaluate_on(
    policy: Policy, arms: np.ndarray, means: np.ndarray, chunk: int = 4096
) -> float:
    """Mean gap between the best and the chosen true mean reward."""
    actions = policy_actions(policy, arms, chunk=chunk)
    chosen = means[np.arange(means.shape[0]), actions]
    return float((means.max(axis=1) - chosen).mean())


def evaluate_suboptimality(
    policy: Policy, instance: BanditInstance, n_te: int, seed: int
) -> float:
    """Sub-optimality on a fresh seeded test-context sample."""
    arms, means = sample_eval_set(instance, n_te, np.random.SeedSequence(seed))
    return evaluate_on(policy, arms, means)


def _network_config(config: ExperimentConfig, dim: int) -> net.NetworkConfig:
    return net.NetworkConfig(
        depth=config.depth,
        width=config.width,
        input_dim=dim,
        layer_norm=config.layer_norm,
    )


def _algo_seed(config: ExperimentConfig, trial: int, algo: str) -> int:
    key = (_KEY_ALGO, trial, ALGO_IDS.index(algo))
    return int(np.random.SeedSequence(entropy=config.seed, spawn_key=key).generate_state(1)[0])


def _collect(config: ExperimentConfig, instance: BanditInstance, seed: int) -> OfflineDataset:
    if config.collect == "eps":
        return collect_eps_greedy(instance, config.horizon, config.collect_eps, seed)
    return collect_adaptive(
        instance,
        config.horizon,
        config.collect_eps,
        seed,
        linucb_alpha=config.linucb_alpha,
        linucb_lam=config.linucb_lam,
    )


def _fit_online(
    trainer, dataset: OfflineDataset, grid: tuple[int, ...], return_rule: str,
    measure_time: bool,
) -> tuple[dict[int, Policy], dict[int, float]]:
    """Drive a streaming trainer along the grid, snapshotting the policy each
    grid point would return and timing each training segment."""
    if return_rule == "latest":
        wanted = {n: n for n in grid}
    else:
        wanted = {n: 1 + int(trainer._ensemble_rng.integers(n)) for n in grid}
    snap_at: dict[int, list[int]] = {}
    for n, t in wanted.items():
        snap_at.setdefault(t, []).append(n)
    policies: dict[int, Policy] = {}
    seconds: dict[int, float] = {}
    prev = 0
    for n in grid:
        start = time.perf_counter() if measure_time else 0.0
        for t in range(prev + 1, n + 1):
            if t in snap_at:
                pol = trainer.policy()
                for size in snap_at[t]:
                    policies[size] = pol
            trainer.update(
                dataset.contexts[t - 1][dataset.actions[t - 1]],
                float(dataset.rewards[t - 1]),
            )
        prev = n
        seconds[n] = (time.perf_counter() - start) if measure_time else 0.0
    return policies, seconds


def _fit_algo(
    algo: str,
    dataset: OfflineDataset,
    grid: tuple[int, ...],
    config: ExperimentConfig,
    hyper: dict,
    seed: int,
) -> tuple[dict[int, Policy], dict[int, float]]:
    """Policies per grid point plus per-point fit seconds."""
    beta = float(hyper.get("beta", config.beta))
    eta = float(hyper.get("eta", config.eta))
    sigma = float(hyper.get("sigma", config.sigma))
    mode = str(hyper.get("mode", config.mode))
    if algo in ("neuralcb", "neuralgreedy"):
        settings = TrainSettings(
            optimizer=config.optimizer,
            learning_rate=eta,
            reg=config.reg,
            train_mode=mode,
            batch_size=config.batch_size,
            batch_steps=config.batch_steps,
            return_rule=config.return_rule,
        )
        net_cfg = _network_config(config, dataset.dim)
        if algo == "neuralcb":
            trainer = NeuralLCB(
                net_cfg, seed, lam=config.lam, beta=beta,
                cov_mode=config.cov_mode, settings=settings,
            )
        else:
            trainer = NeuralGreedy(net_cfg, seed, settings=settings)
        return _fit_online(trainer, dataset, grid, config.return_rule, config.measure_time)

    policies: dict[int, Policy] = {}
    seconds: dict[int, float] = {}
    init_params = None
    if algo in ("neurallinlcb", "neurallingreedy"):
        init_params = net.init_symmetric(_network_config(config, dataset.dim), seed)
    for n in grid:
        start = time.perf_counter() if config.measure_time else 0.0
        prefix = dataset.prefix(n)
        if algo == "linlcb":
            policies[n] = linlcb_fit(prefix, config.lam, beta)
        elif algo == "kernlcb":
            policies[n] = kernlcb_fit(
                prefix, config.lam, beta, sigma=sigma, cap=config.kern_cap
            )
        else:
            policies[n] = neurallin_fit(
                prefix, config.lam, beta, init_params,
                greedy=(algo == "neurallingreedy"),
            )
        seconds[n] = (time.perf_counter() - start) if config.measure_time else 0.0
    return policies, seconds


def run_experiment(
    config: ExperimentConfig, overrides: dict[str, dict] | None = None
) -> SubOptReport:
    """Collect, fit, and score every configured algorithm over seeded trials.

    ``overrides`` maps an algorithm id to hyperparameter replacements (as
    produced by :func:`grid_search`).  Writes CSV and chart files when the
    configuration names an output directory.
    """
    config.validate()
    overrides = overrides or {}
    instance = make_bandit(config)
    arms, means = sample_eval_set(
        instance, config.n_te,
        np.random.SeedSequence(entropy=config.seed, spawn_key=(_KEY_EVAL,)),
    )
    grid = config.grid()
    subopts: dict[tuple[str, int], list[float]] = {
        (algo, n): [] for algo in config.algos for n in grid
    }
    seconds: dict[tuple[str, int], float] = {key: 0.0 for key in subopts}
    for trial in range(config.trials):
        collect_seed = int(
            np.random.SeedSequence(
                entropy=config.seed, spawn_key=(_KEY_COLLECT, trial)
            ).generate_state(1)[0]
        )
        dataset = _collect(config, instance, collect_seed)
        for algo in config.algos:
            policies, fit_seconds = _fit_algo(
                algo, dataset, grid, config, overrides.get(algo, {}),
                _algo_seed(config, trial, algo),
            )
            for n in grid:
                start = time.perf_counter() if config.measure_time else 0.0
                value = evaluate_on(policies[n], arms, means, chunk=config.eval_chunk)
                subopts[(algo, n)].append(value)
                seconds[(algo, n)] += fit_seconds[n] + (
                    (time.perf_counter() - start) if config.measure_time else 0.0
                )
    rows = []
    for algo in config.algos:
        for n in grid:
            values = np.asarray(subopts[(algo, n)])
            mean = float(values.mean())
            if config.trials > 1:
                half = float(1.96 * values.std(ddof=1) / np.sqrt(config.trials))
            else:
                half = 0.0
            rows.append(
                ReportRow(
                    algo=algo, n=n, mean=mean, half_width=half,
                    trials=config.trials,
                    seconds=seconds[(algo, n)] / config.trials,
                )
            )
    report = SubOptReport(bandit=instance.name, rows=rows)
    if config.out_dir:
        emit_outputs(report, config.out_dir)
    return report


def _algo_combos(config: ExperimentConfig, algo: str) -> list[dict]:
    """Hyperparameter grid per algorithm, in deterministic grid order."""
    if algo == "neuralcb":
        return [
            {"beta": b, "eta": e, "mode": m}
            for b in config.beta_grid
            for e in config.eta_grid
            for m in config.mode_grid
        ]
    if algo == "neuralgreedy":
        return [
            {"eta": e, "mode": m} for e in config.eta_grid for m in config.mode_grid
        ]
    if algo == "linlcb":
        return [{"beta": b} for b in config.beta_grid]
    if algo == "kernlcb":
        return [
            {"beta": b, "sigma": s} for b in config.beta_grid for s in config.sigma_grid
        ]
    if algo == "neurallinlcb":
        return [{"beta": b} for b in config.beta_grid]
    return [{}]


def grid_search(config: ExperimentConfig) -> dict[str, dict]:
    """Pick each algorithm's hyperparameters on a dedicated search seed.

    Fits every grid combination on one search log and scores it at the
    largest grid size on the run's shared test contexts; ties go to the
    first combination in grid order.  The search streams are disjoint from
    every trial stream by construction.
    """
    config.validate()
    assert _KEY_SEARCH not in (_KEY_COLLECT, _KEY_ALGO), "search seed must be disjoint"
    instance = make_bandit(config)
    arms, means = sample_eval_set(
        instance, config.n_te,
        np.random.SeedSequence(entropy=config.seed, spawn_key=(_KEY_EVAL,)),
    )
    grid = config.grid()
    top = grid[-1]
    collect_seed = int(
        np.random.SeedSequence(
            entropy=config.seed, spawn_key=(_KEY_SEARCH, 0)
        ).generate_state(1)[0]
    )
    dataset = _collect(config, instance, collect_seed)
    best: dict[str, dict] = {}
    for algo in config.algos:
        algo_seed = int(
            np.random.SeedSequence(
                entropy=config.seed, spawn_key=(_KEY_SEARCH, 1 + ALGO_IDS.index(algo))
            ).generate_state(1)[0]
        )
        best_value = None
        best_combo = {}
        for combo in _algo_combos(config, algo):
            policies, _ = _fit_algo(algo, dataset, (top,), config, combo, algo_seed)
            value = evaluate_on(policies[top], arms, means, chunk=config.eval_chunk)
            if best_value is None or value < best_value:
                best_value = value
                best_combo = combo
        best[algo] = best_combo
    return best


# ---------------------------------------------------------------------------
# Outputs


def _fmt(x: float) -> str:
    return format(x, ".6g")


def emit_outputs(report: SubOptReport, out_dir) -> list[str]:
    """Write results.csv and one CI-band chart per bandit; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["algo", "n", "mean_subopt", "ci_low", "ci_high", "trials", "seconds"]
        )
        for row in report.rows:
            writer.writerow(
                [
                    row.algo,
                    row.n,
                    _fmt(row.mean),
                    _fmt(row.mean - row.half_width),
                    _fmt(row.mean + row.half_width),
                    row.trials,
                    _fmt(row.seconds),
                ]
            )
    paths = [csv_path]
    svg_path = os.path.join(out_dir, f"subopt_{report.bandit}.svg")
    _plot_report(report, svg_path)
    paths.append(svg_path)
    return paths


def _plot_report(report: SubOptReport, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "banditlab"
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    algos = list(dict.fromkeys(row.algo for row in report.rows))
    for algo in algos:
        pts = sorted((row.n, row.mean, row.half_width) for row in report.rows if row.algo == algo)
        ns = [p[0] for p in pts]
        mids = [p[1] for p in pts]
        los = [p[1] - p[2] for p in pts]
        his = [p[1] + p[2] for p in pts]
        ax.plot(ns, mids, marker="o", label=algo)
        ax.fill_between(ns, los, his, alpha=0.2)
    ax.set_xlabel("offline samples")
    ax.set_ylabel("sub-optimality")
    ax.set_title(report.bandit)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def load_results(path) -> SubOptReport:
    """Read a results.csv back into a report (bandit name from the filename
    is not recoverable; stored as the stem's suffix if present)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            mean = float(rec["mean_subopt"])
            rows.append(
                ReportRow(
                    algo=rec["algo"],
                    n=int(rec["n"]),
                    mean=mean,
                    half_width=mean - float(rec["ci_low"]),
                    trials=int(rec["trials"]),
                    seconds=float(rec["seconds"]),
                )
            )
    return SubOptReport(bandit="", rows=rows)
