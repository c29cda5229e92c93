"""LIML and Fuller comparison estimators on residualized data.

On each fold the k-class weight ``kappa`` is computed from the residual
blocks, the per-fold values are averaged, and the average is mapped to the
regularization strength ``gamma = 1 / (1 - kappa)``; estimation then reuses
the regularized coefficient and variance machinery at that ``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .data import ResidualFold
from .errors import SingularSystemError
from .estimators import PreparedFold, prepare_folds

KCLASS_METHODS = ("LIML", "Fuller1", "Fuller4")
_FULLER_ALPHA = {"LIML": 0.0, "Fuller1": 1.0, "Fuller4": 4.0}
_KAPPA_CAP = 1.0 - 1e-6
GAMMA_MAX = 1.0 / (1.0 - _KAPPA_CAP)  # 1e6; numerically indistinguishable from TSLS


@dataclass(frozen=True)
class KappaResult:
    """Per-fold and averaged k-class weights with the bridged gamma value."""

    kappa_per_fold: tuple
    kappa_avg: float
    gamma: float
    method: str


def liml_kappa(fold: ResidualFold) -> float:
    """Smallest generalized eigenvalue of ``Z'Z`` against ``Z'(I - Pi)Z`` for ``Z = [RY | RX]``.

    Solved as a symmetric-definite problem via Cholesky reduction; the value is
    at least one up to eigensolver roundoff.
    """
    p = fold if isinstance(fold, PreparedFold) else PreparedFold(fold)
    if p.RX.shape[1] != 1:
        raise ValueError("the k-class weight is computed for a single endogenous regressor")
    q = p.RA.shape[1]
    if p.n <= q + 1:
        raise ValueError(f"fold needs more than q + d = {q + 1} rows, got {p.n}")
    Z = np.column_stack([p.RY, p.RX])
    CZ = p.U.T @ Z
    ZZ = Z.T @ Z
    ZMZ = ZZ - CZ.T @ CZ  # Z'(I - Pi)Z
    try:
        eigvals = scipy.linalg.eigh(ZZ, ZMZ, eigvals_only=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
        raise SingularSystemError(f"k-class inner matrix is singular: {err}") from err
    return float(eigvals[0])


def fuller_kappa(kappa_liml: float, alpha: float, n_k: int, q: int) -> float:
    """Fuller adjustment ``kappa - alpha / (n_k - q)``; ``alpha = 0`` leaves kappa unchanged."""
    if n_k <= q:
        raise ValueError(f"need n_k > q, got n_k={n_k}, q={q}")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return kappa_liml - alpha / (n_k - q)


def kclass_gamma(kappa: float) -> float:
    """Bridge ``kappa = (gamma - 1) / gamma`` inverted, with kappa capped below one.

    Weights at or above one (LIML's typical range) map to the TSLS-like cap
    ``1e6`` so the downstream variance machinery stays finite.
    """
    return 1.0 / (1.0 - min(kappa, _KAPPA_CAP))


def kappa_result(folds: Sequence[ResidualFold], method: str) -> KappaResult:
    """Per-fold k-class weights, their average, and the bridged gamma."""
    if method not in KCLASS_METHODS:
        raise ValueError(f"method must be one of {KCLASS_METHODS}, got {method!r}")
    prepared = prepare_folds(folds)
    alpha = _FULLER_ALPHA[method]
    q = prepared[0].RA.shape[1]
    kappas: List[float] = []
    for p in prepared:
        k = liml_kappa(p)
        if alpha > 0:
            k = fuller_kappa(k, alpha, p.n, q)
        kappas.append(k)
    kappa_avg = float(np.mean(kappas))
    return KappaResult(
        kappa_per_fold=tuple(kappas),
        kappa_avg=kappa_avg,
        gamma=kclass_gamma(kappa_avg),
        method=method,
    )


def kclass_estimate(
    data=None,
    method: str = "LIML",
    K: int = 2,
    S: int = 100,
    learner=None,
    level: float = 0.95,
    rng=0,
    threads: int = 1,
    folds: Optional[Sequence[ResidualFold]] = None,
):
    """Full repetition pipeline for one k-class method.

    Each repetition draws a split, cross-fits residuals, averages the per-fold
    k-class weights, bridges the average to a regularization strength, and
    evaluates the regularized coefficient and variance there; repetitions are
    combined by the same median scheme as the other estimators (no selection
    step). Alternatively pass precomputed ``folds`` (requires ``S == 1``) to
    evaluate directly on them, e.g. for single-fold oracle checks.
    """
    from .estimators import confidence_interval
    from .pipeline import estimate_methods
    from .regularized import regdml_estimate, regdml_variance

    if folds is not None:
        if S != 1:
            raise ValueError("precomputed folds support a single repetition only (S=1)")
        kr = kappa_result(folds, method)
        b = regdml_estimate(folds, kr.gamma)
        s2 = regdml_variance(folds, kr.gamma, b)
        n_obs = sum(f.n for f in folds)
        lo, hi = confidence_interval(b, s2, n_obs, level)
        from .data import EstimateResult

        return EstimateResult(
            beta=b, sigma2=s2, ci_lower=lo, ci_upper=hi,
            method=method, n_obs=n_obs, gamma=kr.gamma,
        )
    if data is None:
        raise ValueError("pass either a dataset or precomputed folds")
    return estimate_methods(
        data, [method], K=K, S=S, learner=learner, level=level, rng=rng, threads=threads
    )[method]
