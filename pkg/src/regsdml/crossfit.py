"""K-fold cross-fitting of nuisance learners and the instrument-space projection."""

from __future__ import annotations

from typing import Callable, List, Optional

import numpy as np

from .data import Dataset, FoldPartition, ResidualFold
from .learners import RegressorSpec, fit, spline_df

_RANK_RTOL = 1e-10


def orthonormal_basis(RA: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the numerical column space of ``RA``.

    Singular directions below ``1e-10`` times the largest singular value are
    truncated, so nearly collinear instrument residuals degrade gracefully
    instead of blowing up a Gram inversion.
    """
    RA = np.atleast_2d(np.asarray(RA, dtype=float))
    U, s, _ = np.linalg.svd(RA, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return U[:, :0]
    return U[:, s > _RANK_RTOL * s[0]]


def project_onto(RA: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Orthogonal projection of the columns of ``V`` onto ``span(RA)``.

    Computed from an orthonormal basis of ``RA`` without materializing the
    n-by-n projection matrix.
    """
    RA = np.atleast_2d(np.asarray(RA, dtype=float))
    V = np.asarray(V, dtype=float)
    squeeze = V.ndim == 1
    if squeeze:
        V = V[:, None]
    if V.shape[0] != RA.shape[0]:
        raise ValueError("RA and V must have the same number of rows")
    if RA.shape[0] < RA.shape[1]:
        raise ValueError(f"projection needs n >= q, got shape {RA.shape}")
    U = orthonormal_basis(RA)
    out = U @ (U.T @ V)
    return out[:, 0] if squeeze else out


def _fit_fold_learners(data: Dataset, train_idx: np.ndarray, spec: RegressorSpec,
                       rng: np.random.Generator, fold_label: str):
    """Fit the three nuisance learners on the complement rows only."""
    m = train_idx.size
    if spec.kind == "spline":
        need = spline_df(m) if spec.spline_df == "auto" else int(spec.spline_df)
    else:
        need = 2
    if m < need:
        raise ValueError(
            f"{fold_label}: training complement has {m} rows but the learner needs >= {need}"
        )
    W_tr = data.W[train_idx]
    model_a = fit(spec, W_tr, data.A[train_idx], rng)
    model_x = fit(spec, W_tr, data.X[train_idx], rng)
    model_y = fit(spec, W_tr, data.Y[train_idx], rng)
    return model_a, model_x, model_y


def compute_residuals(
    data: Dataset,
    partition: FoldPartition,
    spec: RegressorSpec,
    rng: np.random.Generator,
) -> List[ResidualFold]:
    """Cross-fitted residuals: fit on each fold's complement, evaluate on the fold.

    Rows of a fold are never seen by the learners that produce that fold's
    residuals; only the complement rows enter the fit calls.
    """
    if partition.n_obs != data.n_obs:
        raise ValueError("partition and dataset disagree on the number of rows")
    all_idx = np.arange(data.n_obs)
    child_rngs = rng.spawn(partition.K)
    out = []
    for k, hold in enumerate(partition.folds):
        train_idx = np.setdiff1d(all_idx, hold, assume_unique=True)
        label = f"fold {k + 1} of {partition.K}"
        model_a, model_x, model_y = _fit_fold_learners(data, train_idx, spec, child_rngs[k], label)
        W_hold = data.W[hold]
        out.append(
            ResidualFold(
                RA=data.A[hold] - model_a.predict(W_hold),
                RX=data.X[hold] - model_x.predict(W_hold),
                RY=data.Y[hold] - model_y.predict(W_hold)[:, 0],
                fold_index=k,
            )
        )
    return out


def compute_residuals_from_means(
    data: Dataset,
    partition: FoldPartition,
    true_means: Callable[[np.ndarray], tuple],
) -> List[ResidualFold]:
    """Residuals against known conditional means (oracle bypass of the learners)."""
    out = []
    for k, hold in enumerate(partition.folds):
        m_a, m_x, m_y = true_means(data.W[hold])
        out.append(
            ResidualFold(
                RA=data.A[hold] - np.asarray(m_a, dtype=float).reshape(hold.size, -1),
                RX=data.X[hold] - np.asarray(m_x, dtype=float).reshape(hold.size, -1),
                RY=data.Y[hold] - np.asarray(m_y, dtype=float).reshape(-1),
                fold_index=k,
            )
        )
    return out
