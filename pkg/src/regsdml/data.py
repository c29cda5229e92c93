"""Core domain types: datasets, fold partitions, residuals, and estimation results."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

METHODS = ("DML", "DML1", "DML2", "regDML", "regsDML", "LIML", "Fuller1", "Fuller4")


def _as_matrix(a, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if out.ndim != 2:
        raise ValueError(f"{name} must be a vector or matrix, got ndim={out.ndim}")
    return out


@dataclass(frozen=True)
class Dataset:
    """Observed data for the partially linear instrumental-variable model.

    Columns of ``A`` play the instrument-like role, ``X`` holds the endogenous
    regressors whose linear coefficient is estimated, ``W`` holds the covariates
    that are adjusted for nonparametrically, and ``Y`` is the response.

    Shapes are ``A: (N, q)``, ``X: (N, d)``, ``W: (N, v)``, ``Y: (N,)`` with
    ``q >= d >= 1`` and ``v >= 1``. All entries must be finite.
    """

    A: np.ndarray
    X: np.ndarray
    W: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        X = _as_matrix(self.X, "X")
        W = _as_matrix(self.W, "W")
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Y", Y)
        n = A.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one observation")
        if not (X.shape[0] == W.shape[0] == Y.shape[0] == n):
            raise ValueError(
                "row mismatch: A has %d rows, X %d, W %d, Y %d"
                % (n, X.shape[0], W.shape[0], Y.shape[0])
            )
        if A.shape[1] < X.shape[1]:
            raise ValueError(
                f"underidentified: q={A.shape[1]} instrument columns for d={X.shape[1]} regressors"
            )
        if X.shape[1] < 1 or W.shape[1] < 1:
            raise ValueError("X and W must each have at least one column")
        for name, block in (("A", A), ("X", X), ("W", W), ("Y", Y)):
            if not np.all(np.isfinite(block)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def n_obs(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.A.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def v(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class FoldPartition:
    """Disjoint index sets covering ``range(N)`` with sizes differing by at most one.

    ``K = 1`` is permitted so single-fold oracle computations can reuse the same
    code paths; estimation entry points demand ``K >= 2``.
    """

    folds: tuple
    n_obs: int

    def __post_init__(self):
        folds = tuple(np.asarray(f, dtype=np.intp) for f in self.folds)
        object.__setattr__(self, "folds", folds)
        if len(folds) < 1:
            raise ValueError("partition needs at least one fold")
        sizes = [f.size for f in folds]
        if max(sizes) - min(sizes) > 1:
            raise ValueError(f"fold sizes {sizes} differ by more than one")
        flat = np.concatenate(folds)
        if flat.size != self.n_obs or not np.array_equal(np.sort(flat), np.arange(self.n_obs)):
            raise ValueError("folds must partition range(n_obs) exactly")

    @property
    def K(self) -> int:
        return len(self.folds)


def partition_folds(n_obs: int, K: int, rng: np.random.Generator) -> FoldPartition:
    """Draw a uniformly random partition of ``range(n_obs)`` into ``K`` folds.

    Fold sizes are ``floor(n_obs/K)`` or ``ceil(n_obs/K)``; the draw is a pure
    function of the generator state, so re-seeding reproduces the partition
    bit for bit.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if K > n_obs:
        raise ValueError(f"K={K} exceeds the number of observations {n_obs}")
    perm = rng.permutation(n_obs)
    folds = tuple(np.sort(chunk) for chunk in np.array_split(perm, K))
    return FoldPartition(folds=folds, n_obs=n_obs)


@dataclass(frozen=True)
class ResidualFold:
    """Cross-fitted residuals evaluated on one held-out fold.

    ``RA``, ``RX``, ``RY`` contain the residuals of A, X, Y after subtracting
    the conditional-mean fits trained on the fold's complement.
    """

    RA: np.ndarray
    RX: np.ndarray
    RY: np.ndarray
    fold_index: int

    def __post_init__(self):
        RA = _as_matrix(self.RA, "RA")
        RX = _as_matrix(self.RX, "RX")
        RY = np.asarray(self.RY, dtype=float).reshape(-1)
        object.__setattr__(self, "RA", RA)
        object.__setattr__(self, "RX", RX)
        object.__setattr__(self, "RY", RY)
        if not (RA.shape[0] == RX.shape[0] == RY.shape[0]):
            raise ValueError("residual blocks must have equal row counts")
        for name, block in (("RA", RA), ("RX", RX), ("RY", RY)):
            if not np.all(np.isfinite(block)):
                raise ValueError(f"{name} contains non-finite residuals")

    @property
    def n(self) -> int:
        return self.RA.shape[0]


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate with its estimated asymptotic variance and confidence interval.

    ``sigma2`` estimates the asymptotic variance of ``sqrt(N) * (beta_hat - beta0)``;
    the variance of ``beta_hat`` itself is ``sigma2 / n_obs``.
    """

    beta: np.ndarray
    sigma2: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    method: str
    n_obs: int
    gamma: Optional[float] = None

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        sigma2 = np.atleast_2d(np.asarray(self.sigma2, dtype=float))
        lo = np.atleast_1d(np.asarray(self.ci_lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.ci_upper, dtype=float))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "ci_lower", lo)
        object.__setattr__(self, "ci_upper", hi)
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        d = beta.size
        if sigma2.shape != (d, d):
            raise ValueError(f"sigma2 must be {d}x{d}, got {sigma2.shape}")
        scale = 1.0 + float(np.max(np.abs(sigma2)))
        if np.max(np.abs(sigma2 - sigma2.T)) > 1e-8 * scale:
            raise ValueError("sigma2 is not symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (sigma2 + sigma2.T))) < -1e-8 * scale:
            raise ValueError("sigma2 is not positive semidefinite")
        if np.any(lo > beta) or np.any(beta > hi):
            raise ValueError("confidence interval does not bracket the estimate")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def std_error(self) -> np.ndarray:
        """Standard error of ``beta``, i.e. ``sqrt(diag(sigma2) / n_obs)``."""
        return np.sqrt(np.diag(self.sigma2) / self.n_obs)
