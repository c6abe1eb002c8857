"""Offline contextual bandits: pessimistic neural, linear, and kernel
policies, environments with known mean rewards, offline-log collectors,
infinite-width kernel diagnostics, and an experiment harness."""

__version__ = "0.1.0"

from .bandits import (
    BanditInstance,
    ClassificationBandit,
    ContextSet,
    MushroomBandit,
    SyntheticBandit,
    SyntheticSpec,
    duplicate_transform,
    make_synthetic_bandit,
    unit_sphere_transform,
)
from .confidence import BetaSchedule, CovarianceState, new_covariance
from .data import (
    BehaviorPolicy,
    OfflineDataset,
    collect_adaptive,
    collect_eps_greedy,
    compute_kappa,
    load_dataset,
    load_table,
    save_dataset,
)
from .harness import (
    ExperimentConfig,
    SubOptReport,
    emit_outputs,
    evaluate_suboptimality,
    grid_search,
    run_experiment,
)
from .network import (
    NetworkConfig,
    NetworkParams,
    OptimizerState,
    forward,
    gradient,
    init_symmetric,
    loss_gradient,
    optimizer_step,
)
from .ntk import NtkGram, effective_dim, empirical_gram, min_eigenvalue, ntk_gram
from .policies import (
    LinUCB,
    NeuralGreedy,
    NeuralLCB,
    Policy,
    TrainSettings,
    kernlcb_fit,
    linlcb_fit,
    linucb_act,
    neurallin_fit,
)
