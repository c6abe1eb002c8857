"""Regularized covariance accumulation and confidence-bonus computation.

A :class:`CovarianceState` tracks lam*I + sum_i v_i v_i^T either exactly
(full mode) or through its diagonal, and answers elliptic-norm queries
sqrt(v^T Cov^{-1} v) used as exploration bonuses by the pessimistic policies.
Full mode solves through a cached Cholesky factor instead of maintaining an
explicit inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a covariance matrix fails its Cholesky factorization."""


class CovarianceState:
    """lam*I plus a running sum of rank-one updates.

    mode "full" keeps the dense matrix; mode "diag" keeps only the diagonal,
    in which case updates add the squared entries of each vector.
    """

    def __init__(self, dim: int, lam: float, mode: str = "full"):
        if dim < 1:
            raise ValueError(f"dimension must be >= 1, got {dim}")
        if lam <= 0.0:
            raise ValueError(f"regularizer must be positive, got {lam}")
        if mode not in ("full", "diag"):
            raise ValueError(f"unknown covariance mode {mode!r}")
        self.dim = dim
        self.lam = lam
        self.mode = mode
        self.t = 0
        if mode == "full":
            self.matrix = lam * np.eye(dim)
            self.diag = None
        else:
            self.matrix = None
            self.diag = np.full(dim, lam)
        self._chol = None

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {v.shape}")
        return v

    def update(self, v: np.ndarray) -> "CovarianceState":
        """Add v v^T (full) or v*v elementwise (diag); increments the counter."""
        v = self._check(v)
        if self.mode == "full":
            self.matrix += np.outer(v, v)
            self._chol = None
        else:
            self.diag += v * v
        self.t += 1
        return self

    def _factor(self):
        if self._chol is None:
            try:
                self._chol = cho_factor(self.matrix, lower=True)
            except np.linalg.LinAlgError:
                smallest = float(np.linalg.eigvalsh(self.matrix)[0])
                raise NotPositiveDefiniteError(
                    f"covariance is numerically not positive definite "
                    f"(smallest pivot {smallest:.3e})"
                )
        return self._chol

    def bonus(self, v: np.ndarray) -> float:
        """sqrt(v^T Cov^{-1} v)."""
        return float(self.bonus_many(self._check(v)[None, :])[0])

    def bonus_many(self, vectors: np.ndarray) -> np.ndarray:
        """Bonuses for each row of a (batch, dim) array."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ValueError(
                f"expected array of shape (batch, {self.dim}), got {vectors.shape}"
            )
        if self.mode == "diag":
            return np.sqrt((vectors * vectors / self.diag).sum(axis=1))
        c, lower = self._factor()
        half = solve_triangular(c, vectors.T, lower=lower)
        return np.sqrt((half * half).sum(axis=0))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Cov^{-1} rhs (full mode: Cholesky solve; diag mode: elementwise)."""
        if self.mode == "diag":
            return np.asarray(rhs, dtype=np.float64) / self.diag
        return cho_solve(self._factor(), np.asarray(rhs, dtype=np.float64))

    def log_det_ratio(self) -> float:
        """log det(Cov / lam); grows as informative updates accumulate."""
        if self.mode == "diag":
            return float(np.log(self.diag / self.lam).sum())
        c, _ = self._factor()
        return float(2.0 * np.log(np.diag(c)).sum() - self.dim * math.log(self.lam))

    def copy(self) -> "CovarianceState":
        dup = CovarianceState.__new__(CovarianceState)
        dup.dim = self.dim
        dup.lam = self.lam
        dup.mode = self.mode
        dup.t = self.t
        dup.matrix = None if self.matrix is None else self.matrix.copy()
        dup.diag = None if self.diag is None else self.diag.copy()
        dup._chol = None
        return dup

    @classmethod
    def from_rows(cls, lam: float, rows: np.ndarray, mode: str = "full") -> "CovarianceState":
        """Vectorized construction from a (count, dim) stack of update rows."""
        rows = np.asarray(rows, dtype=np.float64)
        state = cls(rows.shape[1], lam, mode=mode)
        if mode == "full":
            state.matrix += rows.T @ rows
        else:
            state.diag += (rows * rows).sum(axis=0)
        state.t = rows.shape[0]
        return state


def new_covariance(dim: int, lam: float, mode: str = "full") -> CovarianceState:
    return CovarianceState(dim, lam, mode=mode)


@dataclass(frozen=True)
class BetaSchedule:
    """Pessimism weight as a function of the update counter.

    The constant kind ignores the counter.  The growing kind evaluates

        sqrt(lam + c3^2 * t * depth)
        * (sqrt(t)/sqrt(lam) + sqrt(n*K)/sqrt(lam0)) / sqrt(width)

    which ties the weight to the data size n, action count K, and the
    smallest eigenvalue lam0 of the kernel Gram of the observed contexts;
    c3 is a user-supplied absolute constant.
    """

    kind: str
    beta: float = 0.0
    lam: float = 1.0
    depth: int = 2
    width: int = 2
    n: int = 1
    num_actions: int = 1
    lam0: float = 1.0
    c3: float = 1.0

    @classmethod
    def constant(cls, beta: float) -> "BetaSchedule":
        if beta < 0.0:
            raise ValueError(f"beta must be nonnegative, got {beta}")
        return cls(kind="constant", beta=beta)

    @classmethod
    def theoretical(
        cls,
        lam: float,
        depth: int,
        width: int,
        n: int,
        num_actions: int,
        lam0: float,
        c3: float,
    ) -> "BetaSchedule":
        for name, value in (("lam", lam), ("depth", depth), ("width", width),
                            ("n", n), ("num_actions", num_actions),
                            ("lam0", lam0), ("c3", c3)):
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        return cls(kind="theoretical", lam=lam, depth=depth, width=width,
                   n=n, num_actions=num_actions, lam0=lam0, c3=c3)

    def at(self, t: int) -> float:
        if t < 0:
            raise ValueError(f"step index must be nonnegative, got {t}")
        if self.kind == "constant":
            return self.beta
        inflation = math.sqrt(self.lam + self.c3**2 * t * self.depth)
        span = math.sqrt(t) / math.sqrt(self.lam) + math.sqrt(
            self.n * self.num_actions
        ) / math.sqrt(self.lam0)
        return inflation * span / math.sqrt(self.width)


def beta_at(schedule: BetaSchedule, t: int) -> float:
    return schedule.at(t)
