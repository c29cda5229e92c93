"""Repetition pipeline shared by the fitting API, the k-class wrappers, and the
Monte Carlo harness.

Within one repetition a single partition is drawn, residuals are cross-fitted
once, and every requested method is evaluated on those same residual folds;
repetitions are aggregated per method by the median scheme with the
split-variability variance correction.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from .crossfit import compute_residuals, compute_residuals_from_means
from .data import Dataset, EstimateResult, partition_folds
from .errors import EstimationError
from .estimators import (
    confidence_interval,
    dml1_estimate,
    dml2_estimate,
    dml_variance,
    prepare_folds,
)
from .kclass import KCLASS_METHODS, kappa_result
from .learners import RegressorSpec
from .regularized import (
    GammaGrid,
    a_multiplier,
    regdml_estimate,
    regdml_variance,
    select_gamma,
)

PIPELINE_METHODS = ("DML", "regDML", "regsDML") + KCLASS_METHODS

RngLike = Union[int, np.random.Generator]
MeansFn = Callable[[np.ndarray], tuple]


def as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(int(rng))


def _split_eval(folds, n_obs: int, methods: Sequence[str], grid: GammaGrid) -> dict:
    """Evaluate the per-split pieces every requested method needs.

    Numerical failures are captured per piece (keys ``"DML"``, ``"reg"``, and
    each k-class tag map to either a value tuple or the exception) so one
    method's singular system does not take the others down.
    """
    prepared = prepare_folds(folds)
    out: dict = {}
    if any(m in ("DML", "regDML", "regsDML") for m in methods):
        try:
            b = dml2_estimate(prepared)
            s2 = dml_variance(prepared, b)
            out["DML"] = (float(b[0]), float(s2[0, 0]))
        except EstimationError as err:
            out["DML"] = err
    if any(m in ("regDML", "regsDML") for m in methods):
        if isinstance(out["DML"], EstimationError):
            out["reg"] = out["DML"]
        else:
            beta_dml, sigma2_dml = out["DML"]
            try:
                gamma_hat, _ = select_gamma(prepared, grid, beta_dml, sigma2_dml, n_obs)
                if math.isinf(gamma_hat):
                    out["reg"] = (beta_dml, sigma2_dml, gamma_hat, gamma_hat, True)
                else:
                    gamma_prime = a_multiplier(n_obs) * gamma_hat
                    b_reg = regdml_estimate(prepared, gamma_prime)
                    s2_reg = regdml_variance(prepared, gamma_prime, b_reg)
                    out["reg"] = (
                        float(b_reg[0]),
                        float(s2_reg[0, 0]),
                        gamma_hat,
                        gamma_prime,
                        False,
                    )
            except EstimationError as err:
                out["reg"] = err
    for method in methods:
        if method not in KCLASS_METHODS:
            continue
        try:
            kr = kappa_result(prepared, method)
            b = regdml_estimate(prepared, kr.gamma)
            s2 = regdml_variance(prepared, kr.gamma, b)
            out[method] = (float(b[0]), float(s2[0, 0]), kr.gamma)
        except (EstimationError, ValueError) as err:
            out[method] = (
                err if isinstance(err, EstimationError) else EstimationError(str(err))
            )
    return out


def _one_repetition(
    data: Dataset,
    K: int,
    learner: RegressorSpec,
    methods: Sequence[str],
    grid: GammaGrid,
    seed: int,
    oracle_means: Optional[MeansFn],
) -> dict:
    rng = np.random.default_rng(seed)
    partition = partition_folds(data.n_obs, K, rng)
    if oracle_means is not None:
        folds = compute_residuals_from_means(data, partition, oracle_means)
    else:
        folds = compute_residuals(data, partition, learner, rng)
    return _split_eval(folds, data.n_obs, methods, grid)


def _median_aggregate(betas: np.ndarray, sigma2s: np.ndarray) -> Tuple[float, float]:
    beta_med = float(np.median(betas))
    sigma2_med = float(np.median(sigma2s + (betas - beta_med) ** 2))
    return beta_med, sigma2_med


def _result(method: str, beta: float, sigma2: float, n_obs: int, level: float,
            gamma: Optional[float] = None) -> EstimateResult:
    lo, hi = confidence_interval(np.array([beta]), np.array([[sigma2]]), n_obs, level)
    return EstimateResult(
        beta=np.array([beta]),
        sigma2=np.array([[sigma2]]),
        ci_lower=lo,
        ci_upper=hi,
        method=method,
        n_obs=n_obs,
        gamma=gamma,
    )


def _collect(splits: Sequence[dict], key) -> list:
    """Values of one piece across splits, or the first captured failure."""
    for s in splits:
        if isinstance(s[key], EstimationError):
            raise s[key]
    return [s[key] for s in splits]


def _aggregate_method(method: str, splits: Sequence[dict], n_obs: int, level: float) -> EstimateResult:
    if method == "DML":
        vals = _collect(splits, "DML")
        beta, s2 = _median_aggregate(np.array([v[0] for v in vals]), np.array([v[1] for v in vals]))
        return _result("DML", beta, s2, n_obs, level)
    if method in ("regDML", "regsDML"):
        reg = _collect(splits, "reg")
        beta_r, s2_r = _median_aggregate(
            np.array([v[0] for v in reg]), np.array([v[1] for v in reg])
        )
        gamma = float(np.median([v[3] for v in reg]))
        if method == "regDML":
            return _result("regDML", beta_r, s2_r, n_obs, level, gamma=gamma)
        dml = _collect(splits, "DML")
        beta_d, s2_d = _median_aggregate(
            np.array([v[0] for v in dml]), np.array([v[1] for v in dml])
        )
        use_reg = s2_r < s2_d
        return _result(
            "regsDML",
            beta_r if use_reg else beta_d,
            s2_r if use_reg else s2_d,
            n_obs,
            level,
            gamma=gamma,
        )
    if method in KCLASS_METHODS:
        vals = _collect(splits, method)
        beta, s2 = _median_aggregate(np.array([v[0] for v in vals]), np.array([v[1] for v in vals]))
        gamma = float(np.median([v[2] for v in vals]))
        return _result(method, beta, s2, n_obs, level, gamma=gamma)
    raise ValueError(f"unknown method {method!r}")


def _run_splits(
    data: Dataset,
    methods: Sequence[str],
    K: int,
    S: int,
    learner: Optional[RegressorSpec],
    grid: Optional[GammaGrid],
    rng: RngLike,
    threads: int,
    oracle_means: Optional[MeansFn],
) -> List[dict]:
    unknown = [m for m in methods if m not in PIPELINE_METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {PIPELINE_METHODS}")
    if data.d != 1:
        raise ValueError(
            "the repetition pipeline supports a single endogenous regressor; "
            "use dml2_estimate/dml_variance directly for d > 1"
        )
    if S < 1:
        raise ValueError("S must be >= 1")
    if K < 2:
        raise ValueError("estimation requires K >= 2 folds")
    if data.n_obs < 2 * K:
        raise ValueError(f"need at least 2K={2 * K} observations, got {data.n_obs}")
    learner = learner if learner is not None else RegressorSpec()
    grid = grid if grid is not None else GammaGrid.default()
    seeds = as_rng(rng).integers(0, 2**63, size=S)
    if threads > 1 and S > 1:
        return Parallel(n_jobs=threads)(
            delayed(_one_repetition)(data, K, learner, methods, grid, int(s), oracle_means)
            for s in seeds
        )
    return [_one_repetition(data, K, learner, methods, grid, int(s), oracle_means) for s in seeds]


def estimate_methods(
    data: Dataset,
    methods: Sequence[str],
    K: int = 2,
    S: int = 100,
    learner: Optional[RegressorSpec] = None,
    grid: Optional[GammaGrid] = None,
    level: float = 0.95,
    rng: RngLike = 0,
    threads: int = 1,
    oracle_means: Optional[MeansFn] = None,
) -> Dict[str, EstimateResult]:
    """Fit every requested method on ``data``, sharing splits and residuals.

    ``methods`` may contain any of ``DML``, ``regDML``, ``regsDML``, ``LIML``,
    ``Fuller1``, ``Fuller4``. All estimation randomness derives from ``rng``;
    the result is independent of ``threads``. ``oracle_means`` bypasses the
    learner with known conditional means (testing hook). Raises on the first
    numerical failure; see :func:`estimate_methods_partial` for per-method
    failure capture.
    """
    splits = _run_splits(data, methods, K, S, learner, grid, rng, threads, oracle_means)
    return {m: _aggregate_method(m, splits, data.n_obs, level) for m in methods}


def estimate_methods_partial(
    data: Dataset,
    methods: Sequence[str],
    K: int = 2,
    S: int = 100,
    learner: Optional[RegressorSpec] = None,
    grid: Optional[GammaGrid] = None,
    level: float = 0.95,
    rng: RngLike = 0,
    threads: int = 1,
    oracle_means: Optional[MeansFn] = None,
) -> Tuple[Dict[str, EstimateResult], Dict[str, str]]:
    """Like :func:`estimate_methods` but captures per-method failures.

    Returns ``(results, failures)`` where a method appears in exactly one of
    the two dictionaries; ``failures`` maps the method tag to the failure
    message of the first split that broke it.
    """
    splits = _run_splits(data, methods, K, S, learner, grid, rng, threads, oracle_means)
    results: Dict[str, EstimateResult] = {}
    failures: Dict[str, str] = {}
    for m in methods:
        try:
            results[m] = _aggregate_method(m, splits, data.n_obs, level)
        except EstimationError as err:
            failures[m] = str(err)
    return results, failures


def regsdml(
    data: Dataset,
    K: int = 2,
    S: int = 100,
    learner: Optional[RegressorSpec] = None,
    grid: Optional[GammaGrid] = None,
    level: float = 0.95,
    rng: RngLike = 0,
    threads: int = 1,
) -> EstimateResult:
    """Regularization-selection estimate of the linear coefficient (d = 1)."""
    return estimate_methods(
        data, ["regsDML"], K=K, S=S, learner=learner, grid=grid, level=level, rng=rng,
        threads=threads,
    )["regsDML"]


def dml_fit(
    data: Dataset,
    K: int = 2,
    S: int = 100,
    learner: Optional[RegressorSpec] = None,
    level: float = 0.95,
    rng: RngLike = 0,
    assembly: str = "DML2",
    threads: int = 1,
) -> EstimateResult:
    """Plain cross-fitted estimate. Supports d > 1 when ``S == 1``."""
    if data.d == 1 and assembly == "DML2":
        return estimate_methods(
            data, ["DML"], K=K, S=S, learner=learner, level=level, rng=rng, threads=threads,
        )["DML"]
    if S != 1:
        raise ValueError("d > 1 (or the DML1 assembly) supports a single repetition only (S=1)")
    gen = as_rng(rng)
    partition = partition_folds(data.n_obs, K, gen)
    folds = compute_residuals(
        data, partition, learner if learner is not None else RegressorSpec(), gen
    )
    beta = dml2_estimate(folds) if assembly == "DML2" else dml1_estimate(folds)
    sigma2 = dml_variance(folds, beta)
    lo, hi = confidence_interval(beta, sigma2, data.n_obs, level)
    return EstimateResult(
        beta=beta, sigma2=sigma2, ci_lower=lo, ci_upper=hi,
        method=assembly, n_obs=data.n_obs,
    )
