"""Regularized estimation: the shrinkage path b(gamma), its variance, data-driven
selection of the regularization strength, and the repetition/selection pipeline.

The regularized coefficient at strength ``gamma`` minimizes, over the folds,
the residual norm split into the part inside the instrument-residual span
(weighted ``gamma``) and the part outside it (weighted 1). ``gamma = 1`` is
pooled OLS of the residuals, ``gamma -> infinity`` recovers the TSLS-type
estimator, and ``gamma = 0`` partials the instrument residuals out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .crossfit import compute_residuals
from .data import Dataset, EstimateResult, FoldPartition, ResidualFold, partition_folds
from .errors import GammaSelectionError, SingularSystemError
from .estimators import (
    PreparedFold,
    _fold_weights,
    _solve_guarded,
    confidence_interval,
    dml2_estimate,
    dml_variance,
    prepare_folds,
)
from .learners import RegressorSpec

INFINITE_GAMMA = math.inf


@dataclass(frozen=True)
class GammaGrid:
    """Sorted non-negative candidate regularization strengths.

    ``include_infinity`` appends a sentinel candidate standing for "no
    regularization": its objective value is the plain estimator's, and if it
    wins the selection falls back to plain DML.
    """

    values: tuple
    include_infinity: bool = True

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) == 0 and not self.include_infinity:
            raise ValueError("grid must contain at least one candidate")
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError("grid values must be finite and non-negative")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid values must be strictly increasing")

    @classmethod
    def default(cls) -> "GammaGrid":
        """``{0}``, 40 geometric points spanning 1e-3 to 1e5, and the infinity sentinel."""
        return cls(values=(0.0, *np.geomspace(1e-3, 1e5, 40)), include_infinity=True)

    def candidates(self) -> List[float]:
        out = list(self.values)
        if self.include_infinity:
            out.append(INFINITE_GAMMA)
        return out


def a_multiplier(n_obs: int) -> float:
    """Slowly diverging inflation factor for the selected gamma: ``max(1, log(sqrt(N)))``."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    return max(1.0, 0.5 * math.log(n_obs))


def _gamma_system(prepared, gamma: float, weights) -> Tuple[np.ndarray, np.ndarray]:
    d = prepared[0].RX.shape[1]
    bread = np.zeros((d, d))
    rhs = np.zeros(d)
    for wk, p in zip(weights, prepared):
        m = p.moments
        hxx = p.CX.T @ p.CX / p.n
        hxy = p.CX.T @ p.CY / p.n
        bread += wk * (m.SXX + (gamma - 1.0) * hxx)
        rhs += wk * (m.SXY + (gamma - 1.0) * hxy)
    return bread, rhs


def regdml_estimate(
    folds: Sequence[ResidualFold],
    gamma: float,
    assembly: str = "DML2",
    fold_weights: str = "size",
) -> np.ndarray:
    """Closed-form regularized coefficient at a fixed ``gamma``.

    Solves the normal equations of the OLS regression of the transformed
    residuals ``(1 + (sqrt(gamma) - 1) Pi) RY`` on the same transform of RX;
    because the projection is idempotent those normal equations carry the
    weight ``1 + (gamma - 1) Pi``, which is the form assembled here.
    """
    if not (math.isfinite(gamma) and gamma >= 0):
        raise ValueError("gamma must be finite and non-negative")
    if assembly not in ("DML1", "DML2"):
        raise ValueError(f"assembly must be 'DML1' or 'DML2', got {assembly!r}")
    prepared = prepare_folds(folds)
    if assembly == "DML2":
        w = _fold_weights(prepared, fold_weights)
        bread, rhs = _gamma_system(prepared, gamma, w)
        return _solve_guarded(bread, rhs, f"regularized system at gamma={gamma:g}")
    betas = []
    for p in prepared:
        bread, rhs = _gamma_system([p], gamma, [1.0])
        try:
            betas.append(_solve_guarded(bread, rhs, f"regularized system at gamma={gamma:g}"))
        except SingularSystemError as err:
            raise SingularSystemError(
                f"fold {p.fold.fold_index + 1}: {err}", condition=err.condition
            ) from err
    return np.mean(betas, axis=0)


@dataclass(frozen=True)
class DMatrices:
    """Fold-averaged building blocks of the regularized sandwich variance."""

    D1: np.ndarray  # (d, d) second moment of RX
    D2: np.ndarray  # (d, d) projected second moment
    D3: np.ndarray  # (d, q) cross moment times instrument Gram inverse
    D4: np.ndarray  # (d, d) second moment of the composite score
    D5: np.ndarray  # (q,)  instrument Gram inverse times mean score


def _per_fold_variance_parts(p: PreparedFold, gamma: float, b: np.ndarray):
    m = p.moments
    D1k = m.SXX
    D3k = _solve_guarded(m.SAA, m.SXA.T, "instrument Gram matrix").T  # (d, q)
    D2k = D3k @ m.SXA.T
    eps = p.RY - p.RX @ b
    psi = p.RA * eps[:, None]  # (n, q)
    psit = p.RX * eps[:, None]  # (n, d)
    D5k = _solve_guarded(m.SAA, psi.mean(axis=0), "instrument Gram matrix")  # (q,)
    g1 = gamma - 1.0
    ra_d5 = p.RA @ D5k  # (n,)
    composite = (
        psit
        + g1 * (psi @ D3k.T)
        + g1 * (p.RX * ra_d5[:, None] - (m.SXA @ D5k)[None, :])
        - g1 * ((p.RA @ D3k.T) * ra_d5[:, None] - (D3k @ m.SAA @ D5k)[None, :])
    )
    D4k = composite.T @ composite / p.n
    return D1k, D2k, D3k, D4k, D5k


def d_matrices(
    folds: Sequence[ResidualFold],
    gamma: float,
    b_gamma: np.ndarray,
    fold_weights: str = "size",
) -> DMatrices:
    prepared = prepare_folds(folds)
    b = np.atleast_1d(np.asarray(b_gamma, dtype=float))
    w = _fold_weights(prepared, fold_weights)
    parts = [_per_fold_variance_parts(p, gamma, b) for p in prepared]
    avg = lambda i: sum(wk * part[i] for wk, part in zip(w, parts))
    return DMatrices(D1=avg(0), D2=avg(1), D3=avg(2), D4=avg(3), D5=avg(4))


def regdml_variance(
    folds: Sequence[ResidualFold],
    gamma: float,
    b_gamma_hat: np.ndarray,
    fold_weights: str = "size",
) -> np.ndarray:
    """Sandwich estimate of the asymptotic variance of the regularized coefficient.

    The composite score adds to the OLS-type score three correction terms of
    order ``gamma - 1``: the projected score, and the centered cross and Gram
    moments contracted against the per-fold Gram-normalized mean score. At
    ``gamma = 1`` everything reduces to the heteroskedasticity-robust OLS
    sandwich on the residual blocks.
    """
    if not (math.isfinite(gamma) and gamma >= 0):
        raise ValueError("gamma must be finite and non-negative")
    dm = d_matrices(folds, gamma, b_gamma_hat, fold_weights)
    bread = dm.D1 + (gamma - 1.0) * dm.D2
    half = _solve_guarded(bread, dm.D4, f"variance bread matrix at gamma={gamma:g}")
    sigma2 = _solve_guarded(bread, half.T, f"variance bread matrix at gamma={gamma:g}").T
    return 0.5 * (sigma2 + sigma2.T)


def select_gamma(
    folds: Sequence[ResidualFold],
    grid: GammaGrid,
    beta_dml: float,
    sigma2_dml: float,
    n_obs: int,
    fold_weights: str = "size",
) -> Tuple[float, List[float]]:
    """Minimize the estimated asymptotic MSE ``sigma2(gamma)/N + (b(gamma) - beta)^2``.

    Returns the winning ``gamma`` and the objective value at every candidate
    (in grid order, the infinity sentinel last). Ties break toward the
    smallest ``gamma``; candidates whose evaluation fails contribute ``inf``.
    The sentinel's objective is the plain estimator's ``sigma2/N``; if it wins,
    the caller should fall back to plain DML.
    """
    prepared = prepare_folds(folds)
    if prepared[0].RX.shape[1] != 1:
        raise ValueError("gamma selection is defined for a single endogenous regressor (d=1)")
    candidates = grid.candidates()
    if not candidates:
        raise GammaSelectionError("empty regularization grid")
    objectives: List[float] = []
    for g in candidates:
        if math.isinf(g):
            objectives.append(float(sigma2_dml) / n_obs)
            continue
        try:
            b = regdml_estimate(prepared, g, fold_weights=fold_weights)
            s2 = regdml_variance(prepared, g, b, fold_weights=fold_weights)
            objectives.append(float(s2[0, 0]) / n_obs + float(b[0] - beta_dml) ** 2)
        except SingularSystemError:
            objectives.append(math.inf)
    if all(math.isinf(v) for v in objectives):
        raise GammaSelectionError("every regularization candidate failed to evaluate")
    best = int(np.argmin(objectives))  # first minimum = smallest gamma on ties
    return candidates[best], objectives


@dataclass(frozen=True)
class RepetitionRecord:
    """Per-split estimates feeding the median aggregation (single regressor only)."""

    beta_dml: float
    sigma2_dml: float
    beta_reg: float
    sigma2_reg: float
    gamma_hat: float
    gamma_prime: float
    fallback: bool
    seed: Optional[int] = None


def record_from_folds(
    folds: Sequence[ResidualFold],
    n_obs: int,
    grid: GammaGrid,
    fold_weights: str = "size",
    seed: Optional[int] = None,
) -> RepetitionRecord:
    """Run the full per-split computation on precomputed residual folds."""
    prepared = prepare_folds(folds)
    beta = dml2_estimate(prepared, fold_weights=fold_weights)
    sigma2 = dml_variance(prepared, beta, fold_weights=fold_weights)
    beta_dml = float(beta[0])
    sigma2_dml = float(sigma2[0, 0])
    gamma_hat, _ = select_gamma(prepared, grid, beta_dml, sigma2_dml, n_obs, fold_weights)
    if math.isinf(gamma_hat):
        return RepetitionRecord(
            beta_dml=beta_dml,
            sigma2_dml=sigma2_dml,
            beta_reg=beta_dml,
            sigma2_reg=sigma2_dml,
            gamma_hat=gamma_hat,
            gamma_prime=gamma_hat,
            fallback=True,
            seed=seed,
        )
    gamma_prime = a_multiplier(n_obs) * gamma_hat
    b_reg = regdml_estimate(prepared, gamma_prime, fold_weights=fold_weights)
    s2_reg = regdml_variance(prepared, gamma_prime, b_reg, fold_weights=fold_weights)
    return RepetitionRecord(
        beta_dml=beta_dml,
        sigma2_dml=sigma2_dml,
        beta_reg=float(b_reg[0]),
        sigma2_reg=float(s2_reg[0, 0]),
        gamma_hat=gamma_hat,
        gamma_prime=gamma_prime,
        fallback=False,
        seed=seed,
    )


def regsdml_single_split(
    data: Dataset,
    K: int,
    spec: RegressorSpec,
    grid: GammaGrid,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> RepetitionRecord:
    """One random split: residuals are computed once and reused over the whole grid."""
    if data.n_obs < 2 * K:
        raise ValueError(f"need at least 2K={2 * K} observations, got {data.n_obs}")
    partition = partition_folds(data.n_obs, K, rng)
    folds = compute_residuals(data, partition, spec, rng)
    return record_from_folds(folds, data.n_obs, grid, seed=seed)


def aggregate_repetitions(
    records: Sequence[RepetitionRecord],
) -> Tuple[float, float, float, float]:
    """Medians across splits with the split-variability variance correction.

    The aggregated variance is the median of the per-split variances after each
    is inflated by that split's squared deviation from the median coefficient.
    """
    if len(records) < 1:
        raise ValueError("need at least one repetition record")
    beta = np.array([r.beta_dml for r in records])
    s2 = np.array([r.sigma2_dml for r in records])
    beta_reg = np.array([r.beta_reg for r in records])
    s2_reg = np.array([r.sigma2_reg for r in records])
    beta_med = float(np.median(beta))
    beta_reg_med = float(np.median(beta_reg))
    sigma2_med = float(np.median(s2 + (beta - beta_med) ** 2))
    sigma2_reg_med = float(np.median(s2_reg + (beta_reg - beta_reg_med) ** 2))
    return beta_med, sigma2_med, beta_reg_med, sigma2_reg_med


def select_final(
    beta_med: float,
    sigma2_med: float,
    beta_reg_med: float,
    sigma2_reg_med: float,
    n_obs: int,
    level: float,
) -> EstimateResult:
    """Pick the regularized coordinates iff their aggregated variance is strictly smaller."""
    if not (math.isfinite(sigma2_med) and math.isfinite(sigma2_reg_med)):
        raise ValueError("aggregated variances must be finite")
    use_reg = sigma2_reg_med < sigma2_med
    beta = beta_reg_med if use_reg else beta_med
    sigma2 = sigma2_reg_med if use_reg else sigma2_med
    lo, hi = confidence_interval(np.array([beta]), np.array([[sigma2]]), n_obs, level)
    return EstimateResult(
        beta=np.array([beta]),
        sigma2=np.array([[sigma2]]),
        ci_lower=lo,
        ci_upper=hi,
        method="regsDML",
        n_obs=n_obs,
    )
