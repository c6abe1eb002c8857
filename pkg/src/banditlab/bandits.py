"""Contextual bandit environments with known mean-reward functions.

Each environment samples a "full context" (one feature vector per action)
together with the true mean reward of every action, which makes exact
sub-optimality evaluation possible.  Synthetic environments draw per-action
contexts uniformly from the unit sphere; classification-derived environments
lift dataset rows into per-action block vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ContextSet:
    """One round's per-action feature vectors and their true mean rewards."""

    arms: np.ndarray  # (num_actions, dim)
    means: np.ndarray  # (num_actions,)


def sample_sphere(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    """count i.i.d. uniform draws from the unit sphere in R^dim."""
    x = rng.normal(size=(count, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def unit_sphere_transform(x: np.ndarray) -> np.ndarray:
    """Scale a nonzero vector to unit Euclidean norm."""
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return x / norm

def duplicate_transform(x: np.ndarray) -> np.ndarray:
    """Stack a vector against itself and rescale: [x, x]/sqrt(2).

    Preserves the norm, doubles the dimension, and produces the
    half-equals-half structure under which a freshly initialized network
    from :mod:`banditlab.network` outputs exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([x, x]) / np.sqrt(2.0)


@dataclass(frozen=True)
class SyntheticSpec:
    """A nonlinear mean-reward function on the unit sphere.

    Families: "h1" -> 10*(u.a)^2, "h2" -> ||A u||^2, "h3" -> cos(3*u.a),
    with a drawn uniformly from the sphere and A entrywise standard normal.
    """

    family: str
    direction: np.ndarray | None = None  # unit vector, h1/h3
    mixing: np.ndarray | None = None  # (d, d) matrix, h2

    @classmethod
    def generate(cls, family: str, dim: int, seed: int) -> "SyntheticSpec":
        if family not in ("h1", "h2", "h3"):
            raise ValueError(f"unknown synthetic family {family!r}")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        if family == "h2":
            return cls(family=family, mixing=rng.normal(size=(dim, dim)))
        return cls(family=family, direction=sample_sphere(rng, dim, 1)[0])

    def reward_many(self, arms: np.ndarray) -> np.ndarray:
        arms = np.asarray(arms, dtype=np.float64)
        if self.family == "h1":
            return 10.0 * (arms @ self.direction) ** 2
        if self.family == "h2":
            mixed = arms @ self.mixing.T
            return (mixed * mixed).sum(axis=1)
        return np.cos(3.0 * (arms @ self.direction))


def synthetic_reward(spec: SyntheticSpec, u: np.ndarray) -> float:
    """Evaluate the family's mean reward on a single context vector."""
    u = np.asarray(u, dtype=np.float64)
    dim = spec.direction.shape[0] if spec.direction is not None else spec.mixing.shape[0]
    if u.shape != (dim,):
        raise ValueError(f"expected vector of length {dim}, got shape {u.shape}")
    return float(spec.reward_many(u[None, :])[0])


class BanditInstance:
    """Base environment: context sampling, reward noise, optimal values."""

    name: str = "bandit"

    def __init__(self, dim: int, num_actions: int, noise_std: float = 0.0):
        self.dim = dim
        self.num_actions = num_actions
        self.noise_std = noise_std

    def sample_contexts(self, rng: np.random.Generator) -> ContextSet:
        raise NotImplementedError

    def sample_reward(self, contexts: ContextSet, action: int, rng: np.random.Generator) -> float:
        r = float(contexts.means[action])
        if self.noise_std > 0.0:
            r += self.noise_std * rng.normal()
        return r

    def optimal_value(self, contexts: ContextSet) -> float:
        return float(contexts.means.max())


class SyntheticBandit(BanditInstance):
    """Per-action contexts uniform on the sphere, Gaussian reward noise."""

    def __init__(
        self,
        spec: SyntheticSpec,
        dim: int,
        num_actions: int,
        noise_std: float = 0.1,
    ):
        super().__init__(dim, num_actions, noise_std)
        self.spec = spec
        self.name = spec.family

    def sample_contexts(self, rng: np.random.Generator) -> ContextSet:
        arms = sample_sphere(rng, self.dim, self.num_actions)
        return ContextSet(arms=arms, means=self.spec.reward_many(arms))


def make_synthetic_bandit(
    family: str, dim: int, num_actions: int, seed: int, noise_std: float = 0.1
) -> SyntheticBandit:
    spec = SyntheticSpec.generate(family, dim, seed)
    return SyntheticBandit(spec, dim, num_actions, noise_std)


def block_contexts(x: np.ndarray, num_actions: int) -> np.ndarray:
    """Lift one row into per-action block vectors (x,0,..),(0,x,..),..."""
    d = x.shape[0]
    arms = np.zeros((num_actions, d * num_actions))
    for a in range(num_actions):
        arms[a, a * d : (a + 1) * d] = x
    return arms


def prepare_features(features: np.ndarray, min_max_scale: bool = True) -> np.ndarray:
    """Min-max scale each column, then L2-normalize each row.

    Constant columns scale to zero; all-zero rows are rejected since they
    cannot be placed on the unit sphere.
    """
    x = np.array(features, dtype=np.float64)
    if min_max_scale:
        lo = x.min(axis=0)
        hi = x.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        x = (x - lo) / span
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize rows that are entirely zero")
    return x / norms[:, None]


def pad_to_even(features: np.ndarray) -> np.ndarray:
    """Append one zero column when the feature count is odd."""
    if features.shape[1] % 2 == 0:
        return features
    return np.concatenate([features, np.zeros((features.shape[0], 1))], axis=1)


class ClassificationBandit(BanditInstance):
    """A K-class dataset turned into a K-armed bandit.

    Rows are sampled uniformly with replacement; arm a presents the row in
    block slot a and pays mean reward 1 exactly when a is the row's label.
    Rewards are noiseless.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray, num_classes: int | None = None):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.shape[0] == 0:
            raise ValueError("empty dataset")
        if features.shape[0] != labels.shape[0]:
            raise ValueError("features and labels disagree on the row count")
        k = int(num_classes) if num_classes is not None else int(labels.max()) + 1
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"labels must lie in [0, {k})")
        super().__init__(dim=features.shape[1] * k, num_actions=k, noise_std=0.0)
        self.features = features
        self.labels = labels
        self.name = "classification"

    def sample_contexts(self, rng: np.random.Generator) -> ContextSet:
        i = int(rng.integers(self.features.shape[0]))
        arms = block_contexts(self.features[i], self.num_actions)
        means = np.zeros(self.num_actions)
        means[self.labels[i]] = 1.0
        return ContextSet(arms=arms, means=means)


EAT, NO_EAT = 0, 1


class MushroomBandit(BanditInstance):
    """Eat-or-pass bandit over mushroom feature rows.

    Eating an edible row pays +5; eating a poisonous row pays +5 or -35 with
    equal probability (mean -15); passing pays 0.  Arms use the same block
    lifting as the classification conversion so that the two actions present
    distinct feature vectors.
    """

    def __init__(self, features: np.ndarray, edible: np.ndarray):
        features = np.asarray(features, dtype=np.float64)
        edible = np.asarray(edible, dtype=bool)
        if features.shape[0] == 0:
            raise ValueError("empty dataset")
        if features.shape[0] != edible.shape[0]:
            raise ValueError("features and edibility flags disagree on the row count")
        super().__init__(dim=features.shape[1] * 2, num_actions=2, noise_std=0.0)
        self.features = features
        self.edible = edible
        self.name = "mushroom"

    def sample_contexts(self, rng: np.random.Generator) -> ContextSet:
        i = int(rng.integers(self.features.shape[0]))
        arms = block_contexts(self.features[i], 2)
        means = np.array([5.0 if self.edible[i] else -15.0, 0.0])
        return ContextSet(arms=arms, means=means)

    def sample_reward(self, contexts: ContextSet, action: int, rng: np.random.Generator) -> float:
        if action == NO_EAT:
            return 0.0
        if contexts.means[EAT] == 5.0:
            return 5.0
        return 5.0 if rng.random() < 0.5 else -35.0


def mushroom_bandit(features: np.ndarray, edible: np.ndarray) -> MushroomBandit:
    return MushroomBandit(features, edible)


def classification_bandit(
    features: np.ndarray, labels: np.ndarray, num_classes: int | None = None
) -> ClassificationBandit:
    return ClassificationBandit(features, labels, num_classes)


def gaussian_blobs(
    num_classes: int,
    dim: int,
    num_samples: int,
    seed: int,
    center_scale: float = 1.0,
    noise_std: float = 0.1,
) -> tuple[np.ndarray, np.ndarray]:
    """Well-separated Gaussian clusters, rows L2-normalized; returns (X, y)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    centers = center_scale * sample_sphere(rng, dim, num_classes)
    labels = rng.integers(num_classes, size=num_samples)
    x = centers[labels] + noise_std * rng.normal(size=(num_samples, dim))
    return prepare_features(x, min_max_scale=False), labels


def optimal_value(instance: BanditInstance, contexts: ContextSet) -> float:
    return instance.optimal_value(contexts)
