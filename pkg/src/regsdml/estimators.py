"""TSLS-type cross-fitted point estimators and the sandwich variance estimator.

The two assembly schemes differ in where the fold average happens: the
moment-averaging assembly (tag ``DML2``) averages the per-fold moment matrices
before solving once, while the estimate-averaging assembly (tag ``DML1``)
solves within every fold and averages the resulting coefficient vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.special import ndtri

from .crossfit import orthonormal_basis
from .data import ResidualFold
from .errors import SingularSystemError

MAX_CONDITION = 1e12

#: how per-fold moment matrices are averaged across folds: ``"size"`` weights a
#: fold by n_k / N (pooled-sum semantics under rounding), ``"equal"`` uses 1 / K.
FOLD_WEIGHT_MODES = ("size", "equal")


def _solve_guarded(M: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystemError(f"{what} is singular or ill conditioned", condition=float(cond))
    return np.linalg.solve(M, rhs)


@dataclass(frozen=True)
class FoldMoments:
    """Per-fold empirical cross moments of the residual blocks (each over n_k rows)."""

    SXA: np.ndarray  # (d, q) = RX' RA / n_k
    SAA: np.ndarray  # (q, q) = RA' RA / n_k
    SAX: np.ndarray  # (q, d)
    SXX: np.ndarray  # (d, d)
    SAY: np.ndarray  # (q,)
    SXY: np.ndarray  # (d,)
    n_k: int

    @classmethod
    def from_fold(cls, fold: ResidualFold) -> "FoldMoments":
        n = fold.n
        SXA = fold.RX.T @ fold.RA / n
        return cls(
            SXA=SXA,
            SAA=fold.RA.T @ fold.RA / n,
            SAX=SXA.T,
            SXX=fold.RX.T @ fold.RX / n,
            SAY=fold.RA.T @ fold.RY / n,
            SXY=fold.RX.T @ fold.RY / n,
            n_k=n,
        )


class PreparedFold:
    """Residual fold plus cached projection coordinates, shared by the estimators.

    ``U`` is an orthonormal basis of the instrument residual columns; ``CX`` and
    ``CY`` are the coordinates of RX and RY in that basis, so for example
    ``RX' Pi RX = CX' CX`` without ever forming the projection matrix.
    """

    def __init__(self, fold: ResidualFold):
        self.fold = fold
        self.n = fold.n
        self.RA = fold.RA
        self.RX = fold.RX
        self.RY = fold.RY
        self.U = orthonormal_basis(fold.RA)
        self.CX = self.U.T @ fold.RX
        self.CY = self.U.T @ fold.RY
        self.moments = FoldMoments.from_fold(fold)


def prepare_folds(folds: Sequence[ResidualFold]) -> List[PreparedFold]:
    if len(folds) == 0:
        raise ValueError("need at least one residual fold")
    prepared = [f if isinstance(f, PreparedFold) else PreparedFold(f) for f in folds]
    q = prepared[0].RA.shape[1]
    d = prepared[0].RX.shape[1]
    for p in prepared:
        if p.RA.shape[1] != q or p.RX.shape[1] != d:
            raise ValueError("all folds must share the same q and d")
        if p.n < q:
            raise ValueError(f"fold {p.fold.fold_index + 1}: n_k={p.n} < q={q}")
    return prepared


def _fold_weights(prepared: Sequence[PreparedFold], mode: str) -> np.ndarray:
    if mode not in FOLD_WEIGHT_MODES:
        raise ValueError(f"fold_weights must be one of {FOLD_WEIGHT_MODES}")
    if mode == "equal":
        return np.full(len(prepared), 1.0 / len(prepared))
    sizes = np.array([p.n for p in prepared], dtype=float)
    return sizes / sizes.sum()


def dml2_estimate(folds: Sequence[ResidualFold], fold_weights: str = "size") -> np.ndarray:
    """Moment-averaging estimate: average RX' Pi RX and RX' Pi RY over folds, then solve."""
    prepared = prepare_folds(folds)
    w = _fold_weights(prepared, fold_weights)
    d = prepared[0].RX.shape[1]
    bread = np.zeros((d, d))
    rhs = np.zeros(d)
    for wk, p in zip(w, prepared):
        bread += wk * (p.CX.T @ p.CX) / p.n
        rhs += wk * (p.CX.T @ p.CY) / p.n
    return _solve_guarded(bread, rhs, "averaged projected moment matrix")


def dml1_estimate(folds: Sequence[ResidualFold]) -> np.ndarray:
    """Estimate-averaging assembly: plain mean of the per-fold TSLS solutions."""
    prepared = prepare_folds(folds)
    betas = []
    for p in prepared:
        bread = p.CX.T @ p.CX
        try:
            betas.append(_solve_guarded(bread, p.CX.T @ p.CY, "per-fold projected moment matrix"))
        except SingularSystemError as err:
            raise SingularSystemError(
                f"fold {p.fold.fold_index + 1}: {err}", condition=err.condition
            ) from err
    return np.mean(betas, axis=0)


def _j_bread(p: PreparedFold):
    m = p.moments
    G = _solve_guarded(m.SAA, m.SAX, "instrument Gram matrix")  # inv(SAA) SAX
    inner = m.SXA @ G
    return _solve_guarded(inner, G.T, "projected regressor moment matrix")  # (d, q)


def dml_variance(
    folds: Sequence[ResidualFold], beta_hat: np.ndarray, fold_weights: str = "size"
) -> np.ndarray:
    """Sandwich estimate of the asymptotic variance of ``sqrt(N) (beta_hat - beta0)``.

    Bread: per-fold ``(SXA SAA^-1 SAX)^-1 SXA SAA^-1`` averaged over folds.
    Meat: fold-averaged second moment of the score ``RA (RY - RX' beta)``.
    """
    prepared = prepare_folds(folds)
    beta_hat = np.atleast_1d(np.asarray(beta_hat, dtype=float))
    w = _fold_weights(prepared, fold_weights)
    d = prepared[0].RX.shape[1]
    q = prepared[0].RA.shape[1]
    J0 = np.zeros((d, q))
    meat = np.zeros((q, q))
    for wk, p in zip(w, prepared):
        J0 += wk * _j_bread(p)
        eps = p.RY - p.RX @ beta_hat
        psi = p.RA * eps[:, None]
        meat += wk * (psi.T @ psi) / p.n
    sigma2 = J0 @ meat @ J0.T
    return 0.5 * (sigma2 + sigma2.T)


def confidence_interval(
    beta: np.ndarray, sigma2: np.ndarray, n_obs: int, level: float
) -> tuple[np.ndarray, np.ndarray]:
    """Two-sided normal interval ``beta_j +- z * sqrt(sigma2_jj / n_obs)`` per coordinate."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    sigma2 = np.atleast_2d(np.asarray(sigma2, dtype=float))
    z = ndtri(0.5 * (1.0 + level))
    half = z * np.sqrt(np.diag(sigma2) / n_obs)
    return beta - half, beta + half


@dataclass(frozen=True)
class OrthogonalityDiagnostic:
    """Finite-difference pathwise derivative of a score's mean with its MC error."""

    score: str
    derivative: float
    std_error: float
    step: float
    mc_size: int

    @property
    def t_ratio(self) -> float:
        return self.derivative / self.std_error if self.std_error > 0 else np.inf


def orthogonality_diagnostic(
    score: str,
    scenario,
    mc_size: int,
    step: float,
    rng: np.random.Generator,
) -> OrthogonalityDiagnostic:
    """Numerically probe whether a score is insensitive to nuisance perturbations.

    Draws ``mc_size`` observations from ``scenario``, evaluates the score at the
    scenario's true conditional means shifted by ``+-step`` in the fixed
    direction that adds one to every conditional-mean output, and returns the
    central finite difference of the Monte Carlo mean together with its
    standard error. ``score`` is ``"neyman_psi"`` (instrument residual times
    outcome-equation residual) or ``"naive_varphi"`` (raw instrument times the
    same residual).
    """
    if score not in ("neyman_psi", "naive_varphi"):
        raise ValueError(f"unknown score {score!r}")
    if mc_size < 1000:
        raise ValueError("mc_size must be >= 1000")
    if not 0.0 < step <= 0.1:
        raise ValueError("step must lie in (0, 0.1]")
    data = scenario.generate(mc_size, rng)
    means = scenario.true_means(data.W)
    if means is None:
        raise ValueError(f"scenario {scenario.name!r} does not expose true conditional means")
    if data.q != 1:
        raise ValueError("the diagnostic is defined for scenarios with a single instrument")
    m_a = np.asarray(means[0], dtype=float).reshape(-1)
    m_x = np.asarray(means[1], dtype=float).reshape(mc_size, -1)
    m_y = np.asarray(means[2], dtype=float).reshape(-1)
    beta0 = np.full(data.d, float(scenario.beta0))
    a = data.A[:, 0]
    y = data.Y

    def score_at(r: float) -> np.ndarray:
        resid = y - (m_y + r) - (data.X - (m_x + r)) @ beta0
        lead = a - (m_a + r) if score == "neyman_psi" else a
        return lead * resid

    per_sample = (score_at(step) - score_at(-step)) / (2.0 * step)
    derivative = float(np.mean(per_sample))
    std_error = float(np.std(per_sample, ddof=1) / np.sqrt(mc_size))
    return OrthogonalityDiagnostic(
        score=score, derivative=derivative, std_error=std_error, step=step, mc_size=mc_size
    )
