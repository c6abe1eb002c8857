"""Offline log collection, dataset containers, and CSV ingestion.

Logs are ordered: the learners consume records in collection order, and the
adaptive collector's actions genuinely depend on everything logged before
them.  A dataset is a deterministic function of (environment, size, policy
parameters, seed).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from .bandits import BanditInstance, ContextSet
from .policies import LinUCB


@dataclass(frozen=True)
class BehaviorPolicy:
    """How an offline log was produced."""

    kind: str  # "eps_greedy" | "adaptive" | "external"
    eps: float = 0.0
    seed: int = 0

    def describe(self) -> dict:
        return {"kind": self.kind, "eps": self.eps, "seed": self.seed}


@dataclass
class OfflineDataset:
    """An ordered log of (full context, action, reward) triples."""

    contexts: np.ndarray  # (n, num_actions, dim)
    actions: np.ndarray  # (n,)
    rewards: np.ndarray  # (n,)
    behavior: BehaviorPolicy

    def __post_init__(self):
        n = self.contexts.shape[0]
        if self.actions.shape != (n,) or self.rewards.shape != (n,):
            raise ValueError("contexts, actions and rewards disagree on the record count")

    def __len__(self) -> int:
        return self.contexts.shape[0]

    @property
    def num_actions(self) -> int:
        return self.contexts.shape[1]

    @property
    def dim(self) -> int:
        return self.contexts.shape[2]

    def prefix(self, n: int) -> "OfflineDataset":
        """The first n records, sharing storage with the parent log."""
        if not 1 <= n <= len(self):
            raise ValueError(f"prefix length {n} outside [1, {len(self)}]")
        return OfflineDataset(
            contexts=self.contexts[:n],
            actions=self.actions[:n],
            rewards=self.rewards[:n],
            behavior=self.behavior,
        )

    def chosen_features(self) -> np.ndarray:
        """The logged action's feature vector per record, shape (n, dim)."""
        return self.contexts[np.arange(len(self)), self.actions]


def collect_eps_greedy(
    instance: BanditInstance, n: int, eps: float, seed: int
) -> OfflineDataset:
    """Log n rounds of an epsilon-greedy policy on the true mean rewards.

    With probability eps the action is uniform over all arms (the greedy arm
    included); otherwise it is the argmax of the true means, ties to the
    lowest index.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    contexts = np.empty((n, instance.num_actions, instance.dim))
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    for t in range(n):
        cs = instance.sample_contexts(rng)
        if rng.random() < eps:
            a = int(rng.integers(instance.num_actions))
        else:
            a = int(np.argmax(cs.means))
        contexts[t] = cs.arms
        actions[t] = a
        rewards[t] = instance.sample_reward(cs, a, rng)
    return OfflineDataset(
        contexts, actions, rewards,
        BehaviorPolicy(kind="eps_greedy", eps=eps, seed=seed),
    )


def collect_adaptive(
    instance: BanditInstance,
    n: int,
    eps: float,
    seed: int,
    linucb_alpha: float = 1.0,
    linucb_lam: float = 0.1,
) -> OfflineDataset:
    """Log n rounds of a history-dependent mixture policy.

    Each round plays the true-mean argmax with probability 1 - eps and an
    optimistic linear learner's choice otherwise.  The linear learner is
    refreshed with every logged record regardless of which branch fired, so
    later actions depend on the entire earlier log.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    learner = LinUCB(instance.dim, lam=linucb_lam, alpha=linucb_alpha)
    contexts = np.empty((n, instance.num_actions, instance.dim))
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    for t in range(n):
        cs = instance.sample_contexts(rng)
        if rng.random() < eps:
            a = learner.act(cs.arms)
        else:
            a = int(np.argmax(cs.means))
        r = instance.sample_reward(cs, a, rng)
        learner.update(cs.arms[a], r)
        contexts[t] = cs.arms
        actions[t] = a
        rewards[t] = r
    return OfflineDataset(
        contexts, actions, rewards,
        BehaviorPolicy(kind="adaptive", eps=eps, seed=seed),
    )


def compute_kappa(behavior: BehaviorPolicy, num_actions: int) -> float | None:
    """Worst-case density ratio of the optimal policy against the behavior.

    For epsilon-greedy logs the ratio is exactly 1/(1 - eps + eps/K); for the
    adaptive mixture only the upper bound 1/(1 - eps) is available (the
    optimistic branch may or may not pick the optimal arm).  Unknown for
    external logs.
    """
    if behavior.kind == "eps_greedy":
        return 1.0 / (1.0 - behavior.eps + behavior.eps / num_actions)
    if behavior.kind == "adaptive":
        if behavior.eps >= 1.0:
            return float("inf")
        return 1.0 / (1.0 - behavior.eps)
    return None


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass
class RawTable:
    """An encoded feature table: one-hot categoricals, labels in [0, K)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    label_values: list[str]

    @property
    def num_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def parse_schema(schema) -> list[tuple[str, list[str] | None]]:
    """Parse column kinds: "num", "cat", "cat{a,b,...}" or "label".

    Accepts a comma-separated string or a sequence of tokens; exactly one
    label column is required.  An enumerated "cat{...}" fixes the category
    set, and values outside it are rejected at load time.
    """
    if isinstance(schema, str):
        tokens, depth, cur = [], 0, ""
        for ch in schema:
            if ch == "," and depth == 0:
                tokens.append(cur.strip())
                cur = ""
                continue
            depth += ch == "{"
            depth -= ch == "}"
            cur += ch
        tokens.append(cur.strip())
    else:
        tokens = [str(t).strip() for t in schema]
    parsed = []
    for tok in tokens:
        if tok == "num" or tok == "label":
            parsed.append((tok, None))
        elif tok == "cat":
            parsed.append(("cat", None))
        elif tok.startswith("cat{") and tok.endswith("}"):
            cats = [c.strip() for c in tok[4:-1].split(",") if c.strip()]
            if not cats:
                raise ValueError(f"empty category set in schema token {tok!r}")
            parsed.append(("cat", cats))
        else:
            raise ValueError(f"unknown schema token {tok!r}")
    if sum(1 for kind, _ in parsed if kind == "label") != 1:
        raise ValueError("schema must contain exactly one label column")
    return parsed


def load_table(path, schema, has_header: bool = False) -> RawTable:
    """Load a comma-separated file under a column schema.

    Numeric columns parse as floats, categorical columns one-hot encode
    (categories sorted, or fixed by the schema), and the label column maps
    its sorted distinct values onto 0..K-1.  Malformed rows raise with their
    1-based line number.
    """
    cols = parse_schema(schema)
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row:
                continue
            if len(row) != len(cols):
                raise ValueError(
                    f"{path}: line {lineno}: expected {len(cols)} fields, got {len(row)}"
                )
            rows.append([cell.strip() for cell in row])
    if not rows:
        raise ValueError(f"{path}: no data rows")

    start = 2 if has_header else 1
    categories: list[list[str] | None] = []
    for j, (kind, fixed) in enumerate(cols):
        if kind != "cat":
            categories.append(None)
        elif fixed is not None:
            categories.append(list(fixed))
        else:
            categories.append(sorted({row[j] for row in rows}))

    label_col = next(j for j, (kind, _) in enumerate(cols) if kind == "label")
    label_values = sorted({row[label_col] for row in rows})
    label_index = {v: i for i, v in enumerate(label_values)}

    blocks = []
    for j, (kind, _) in enumerate(cols):
        if kind == "num":
            col = np.empty(len(rows))
            for i, row in enumerate(rows):
                try:
                    col[i] = float(row[j])
                except ValueError:
                    raise ValueError(
                        f"{path}: line {i + start}: column {j + 1}: "
                        f"cannot parse {row[j]!r} as a number"
                    ) from None
            blocks.append(col[:, None])
        elif kind == "cat":
            cats = categories[j]
            index = {c: k for k, c in enumerate(cats)}
            block = np.zeros((len(rows), len(cats)))
            for i, row in enumerate(rows):
                k = index.get(row[j])
                if k is None:
                    raise ValueError(
                        f"{path}: line {i + start}: column {j + 1}: "
                        f"unknown category {row[j]!r} (allowed: {cats})"
                    )
                block[i, k] = 1.0
            blocks.append(block)
    features = np.concatenate(blocks, axis=1) if blocks else np.zeros((len(rows), 0))
    labels = np.array([label_index[row[label_col]] for row in rows], dtype=np.int64)
    return RawTable(
        features=features,
        labels=labels,
        num_classes=len(label_values),
        label_values=label_values,
    )


# ---------------------------------------------------------------------------
# Binary dataset persistence

_RECORD_ACTION = struct.Struct("<I")
_RECORD_REWARD = struct.Struct("<d")


def save_dataset(dataset: OfflineDataset, path) -> None:
    """Write a log: one JSON header line, then fixed-size binary records of
    num_actions*dim little-endian float64 context values, a uint32 action,
    and a float64 reward."""
    header = {
        "dim": dataset.dim,
        "num_actions": dataset.num_actions,
        "n": len(dataset),
        "behavior": dataset.behavior.describe(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for t in range(len(dataset)):
            fh.write(dataset.contexts[t].astype("<f8").tobytes())
            fh.write(_RECORD_ACTION.pack(int(dataset.actions[t])))
            fh.write(_RECORD_REWARD.pack(float(dataset.rewards[t])))


def load_dataset(path) -> OfflineDataset:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        n = header["n"]
        k = header["num_actions"]
        d = header["dim"]
        contexts = np.empty((n, k, d))
        actions = np.empty(n, dtype=np.int64)
        rewards = np.empty(n)
        ctx_bytes = 8 * k * d
        for t in range(n):
            contexts[t] = np.frombuffer(fh.read(ctx_bytes), dtype="<f8").reshape(k, d)
            actions[t] = _RECORD_ACTION.unpack(fh.read(4))[0]
            rewards[t] = _RECORD_REWARD.unpack(fh.read(8))[0]
    meta = header["behavior"]
    behavior = BehaviorPolicy(kind=meta["kind"], eps=meta["eps"], seed=meta["seed"])
    return OfflineDataset(contexts, actions, rewards, behavior)
