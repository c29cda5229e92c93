"""Named structural-equation scenarios and the Monte Carlo coverage harness.

Each scenario is a fixed data-generating process with a hidden confounder H.
Where the conditional means of A, X, Y given W have closed forms, the scenario
exposes them through :meth:`ScenarioSpec.true_means`, which powers the
orthogonality diagnostics and oracle-learner calibration runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed
from scipy.special import expit, ndtr

from . import pipeline
from .crossfit import compute_residuals
from .data import Dataset, EstimateResult, partition_folds
from .estimators import dml2_estimate
from .learners import RegressorSpec

SCENARIOS = (
    "intro_sem",
    "forest_sem",
    "strong_confounding",
    "wh_noise",
    "hw_noise",
    "naive_instrument_sem",
    "linear_gaussian_oracle",
)

_DEFAULTS: Dict[str, Dict[str, float]] = {
    "intro_sem": {"beta0": 1.0, "alpha_link": 1.0},
    "forest_sem": {"beta0": 1.0, "alpha_link": 1.5},
    "strong_confounding": {"beta0": 0.0, "chi": 15.0},
    "wh_noise": {"beta0": 0.0, "kappa_noise": 2.0},
    "hw_noise": {"beta0": 0.0, "kappa_noise": 1.0},
    "naive_instrument_sem": {"beta0": 1.0},
    "linear_gaussian_oracle": {"beta0": 2.0},
}


@lru_cache(maxsize=1)
def _toeplitz_transform() -> np.ndarray:
    """Upper Cholesky factor of the 20x20 Toeplitz matrix with first row 0.7**k."""
    toep = scipy.linalg.toeplitz(0.7 ** np.arange(20))
    return scipy.linalg.cholesky(toep, lower=False)


@dataclass(frozen=True)
class ScenarioSpec:
    """A named generator configuration.

    ``chi`` scales the hidden-confounder effect in ``strong_confounding``,
    ``kappa_noise`` scales the noise of the W-H link in ``wh_noise`` and
    ``hw_noise``, and ``alpha_link`` scales the direct instrument effect on X
    in ``intro_sem`` and ``forest_sem``. Fields irrelevant to a scenario are
    ignored by its generator.
    """

    name: str
    beta0: float
    chi: float = 15.0
    kappa_noise: float = 1.0
    alpha_link: float = 1.0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}; choose from {SCENARIOS}")

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(q, d, v) of the generated dataset."""
        return {
            "intro_sem": (1, 1, 1),
            "forest_sem": (2, 1, 2),
            "strong_confounding": (1, 1, 1),
            "wh_noise": (1, 1, 1),
            "hw_noise": (1, 1, 1),
            "naive_instrument_sem": (1, 1, 20),
            "linear_gaussian_oracle": (1, 1, 1),
        }[self.name]

    def generate(
        self,
        n_obs: int,
        rng: np.random.Generator,
        zero_noise: bool = False,
        return_latent: bool = False,
    ):
        """Draw ``n_obs`` observations; ``zero_noise`` forces every stochastic
        draw (including exogenous ones) to zero so the deterministic skeleton
        of the assignment equations can be inspected. ``return_latent``
        additionally returns a dict with the hidden confounder ``H``."""
        if n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        gen = _GENERATORS[self.name]
        data, latent = gen(self, n_obs, rng, zero_noise)
        return (data, latent) if return_latent else data

    def true_means(self, W: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Closed-form conditional means ``(E[A|W], E[X|W], E[Y|W])`` evaluated
        row-wise at ``W``, or ``None`` when the scenario has no closed form."""
        fn = _TRUE_MEANS.get(self.name)
        return None if fn is None else fn(self, np.asarray(W, dtype=float))

    @property
    def has_true_means(self) -> bool:
        return self.name in _TRUE_MEANS


def scenario(name: str, **overrides) -> ScenarioSpec:
    """Scenario by name with its figure defaults; keyword overrides allowed."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    params = dict(_DEFAULTS[name])
    params.update({k: float(v) for k, v in overrides.items() if v is not None})
    return ScenarioSpec(name=name, **params)


def _noise(rng, zero_noise, shape):
    return np.zeros(shape) if zero_noise else rng.standard_normal(shape)


def _gen_intro(spec, n, rng, zero):
    W = np.zeros(n) if zero else np.pi * rng.uniform(-1.0, 1.0, size=n)
    eps = _noise(rng, zero, (n, 4))
    A = 3.0 * np.tanh(2.0 * W) + eps[:, 0]
    H = 2.0 * np.sin(W) + eps[:, 1]
    X = -spec.alpha_link * np.abs(A) - 2.0 * np.tanh(W) - H + eps[:, 2]
    Y = spec.beta0 * X + 0.5 * W**2 - 3.0 * np.cos(0.25 * np.pi * H) + eps[:, 3]
    return Dataset(A=A, X=X, W=W, Y=Y), {"H": H}


def _gen_forest(spec, n, rng, zero):
    eps = _noise(rng, zero, (n, 7))
    A1 = (eps[:, 0] <= 0.0).astype(float)
    A2 = -4.0 * A1 + eps[:, 1]
    W1 = 2.0 * A2 + eps[:, 2]
    W2 = eps[:, 3]
    H = 2.0 * (np.sin(np.pi * W1) * np.tanh(W2) >= 0.0).astype(float) + eps[:, 4]
    X = (
        spec.alpha_link * A1
        - 0.5 * A2
        + np.tanh(H)
        - 2.0 * (W1 >= 0.0) * (W2 <= 0.0)
        + eps[:, 5]
    )
    Y = spec.beta0 * X + (W2 <= 0.0).astype(float) + np.sin(np.pi * H) + eps[:, 6]
    return Dataset(A=np.column_stack([A1, A2]), X=X, W=np.column_stack([W1, W2]), Y=Y), {"H": H}


def _gen_strong(spec, n, rng, zero):
    eps = _noise(rng, zero, (n, 5))
    A = eps[:, 0]
    W = eps[:, 1]
    H = eps[:, 2]
    X = A + W + spec.chi * H + 0.25 * eps[:, 3]
    Y = spec.beta0 * X + W + H + 0.25 * eps[:, 4]
    return Dataset(A=A, X=X, W=W, Y=Y), {"H": H}


def _gen_wh(spec, n, rng, zero):
    eps = _noise(rng, zero, (n, 5))
    A = eps[:, 0]
    W = eps[:, 1]
    H = W + spec.kappa_noise * eps[:, 2]
    X = 0.5 * A + 3.0 * np.tanh(2.0 * W) + 1.5 * H + 0.25 * eps[:, 3]
    Y = spec.beta0 * X - np.tanh(W) + H + 0.25 * eps[:, 4]
    return Dataset(A=A, X=X, W=W, Y=Y), {"H": H}


def _gen_hw(spec, n, rng, zero):
    eps = _noise(rng, zero, (n, 5))
    H = eps[:, 0]
    W = 2.0 * H + spec.kappa_noise * eps[:, 1]
    A = np.exp(-0.5 * W) + 0.5 * eps[:, 2]
    X = -A - 0.1 * W**3 - 0.2 * W**2 + 0.4 * W + 7.0 * expit(4.0 * H) + 0.25 * eps[:, 3]
    Y = spec.beta0 * X + 0.5 * W + 0.5 * H + eps[:, 4]
    return Dataset(A=A, X=X, W=W, Y=Y), {"H": H}


def _gen_naive(spec, n, rng, zero):
    eps = _noise(rng, zero, (n, 24))
    H = eps[:, 21]
    W = eps[:, 1:21] @ _toeplitz_transform()
    A = expit(W[:, 0]) + W[:, 1] + W[:, 2] + eps[:, 0]
    X = 2.0 * A + W[:, 0] + 0.25 * expit(W[:, 2]) + H + eps[:, 22]
    Y = spec.beta0 * X + expit(W[:, 0]) + 0.25 * W[:, 2] + H + eps[:, 23]
    return Dataset(A=A, X=X, W=W, Y=Y), {"H": H}


def _gen_oracle(spec, n, rng, zero):
    eps = _noise(rng, zero, (n, 5))
    W = eps[:, 0]
    A = 1.0 + 2.0 * W + eps[:, 1]
    H = eps[:, 2]
    X = A + W + H + eps[:, 3]
    Y = spec.beta0 * X + W + H + eps[:, 4]
    return Dataset(A=A, X=X, W=W, Y=Y), {"H": H}


_GENERATORS = {
    "intro_sem": _gen_intro,
    "forest_sem": _gen_forest,
    "strong_confounding": _gen_strong,
    "wh_noise": _gen_wh,
    "hw_noise": _gen_hw,
    "naive_instrument_sem": _gen_naive,
    "linear_gaussian_oracle": _gen_oracle,
}


def _folded_normal_mean(mu: np.ndarray) -> np.ndarray:
    # E|Z| for Z ~ N(mu, 1)
    return np.sqrt(2.0 / np.pi) * np.exp(-0.5 * mu**2) + mu * (2.0 * ndtr(mu) - 1.0)


def _means_intro(spec, W):
    w = W[:, 0]
    m_a = 3.0 * np.tanh(2.0 * w)
    m_h = 2.0 * np.sin(w)
    m_x = -spec.alpha_link * _folded_normal_mean(m_a) - 2.0 * np.tanh(w) - m_h
    a = 0.25 * np.pi
    m_y = spec.beta0 * m_x + 0.5 * w**2 - 3.0 * np.cos(a * m_h) * math.exp(-0.5 * a**2)
    return m_a, m_x, m_y


def _means_strong(spec, W):
    w = W[:, 0]
    zero = np.zeros_like(w)
    return zero, w, spec.beta0 * w + w


def _means_wh(spec, W):
    w = W[:, 0]
    m_x = 3.0 * np.tanh(2.0 * w) + 1.5 * w
    return np.zeros_like(w), m_x, spec.beta0 * m_x - np.tanh(w) + w


def _means_naive(spec, W):
    m_a = expit(W[:, 0]) + W[:, 1] + W[:, 2]
    m_x = 2.0 * m_a + W[:, 0] + 0.25 * expit(W[:, 2])
    m_y = spec.beta0 * m_x + expit(W[:, 0]) + 0.25 * W[:, 2]
    return m_a, m_x, m_y


def _means_oracle(spec, W):
    w = W[:, 0]
    m_a = 1.0 + 2.0 * w
    m_x = m_a + w
    return m_a, m_x, spec.beta0 * m_x + w


_TRUE_MEANS = {
    "intro_sem": _means_intro,
    "strong_confounding": _means_strong,
    "wh_noise": _means_wh,
    "naive_instrument_sem": _means_naive,
    "linear_gaussian_oracle": _means_oracle,
}


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSummary:
    """Per-method Monte Carlo metrics over the successful runs."""

    method: str
    coverage: float
    rejection_rate: float
    ci_length_scaled: tuple
    n_failures: int

    @property
    def median_scaled_length(self) -> float:
        return float(np.median(self.ci_length_scaled)) if self.ci_length_scaled else math.nan


@dataclass(frozen=True)
class SimulationReport:
    """Aggregated coverage, rejection, and scaled CI-length tables.

    Confidence-interval lengths are scaled by the median DML length over the
    same runs, matching how the simulation figures report them.
    """

    scenario: str
    beta0: float
    methods: tuple  # of MethodSummary, in request order
    runs: int
    n_obs: int
    K: int
    S: int
    level: float
    seed: Optional[int]

    def summary(self, method: str) -> MethodSummary:
        for m in self.methods:
            if m.method == method:
                return m
        raise KeyError(method)


def _mc_one_run(spec, n_obs, methods, K, S, grid, learner, level, seed, extra_methods):
    rng = np.random.default_rng(seed)
    data = spec.generate(n_obs, rng)
    oracle_means = None
    learner_spec = learner
    if isinstance(learner, str):
        if learner != "oracle":
            raise ValueError(f"unknown learner {learner!r}")
        if not spec.has_true_means:
            raise ValueError(f"scenario {spec.name!r} has no closed-form conditional means")
        oracle_means = spec.true_means
        learner_spec = None
    builtin = [m for m in methods if m in pipeline.PIPELINE_METHODS]
    results, failures = pipeline.estimate_methods_partial(
        data, builtin, K=K, S=S, learner=learner_spec, grid=grid, level=level,
        rng=rng, oracle_means=oracle_means,
    )
    for name, fn in (extra_methods or {}).items():
        try:
            results[name] = fn(data, rng)
        except Exception as err:  # degenerate testing hooks may fail arbitrarily
            failures[name] = str(err)
    return results, failures


def run_monte_carlo(
    spec: ScenarioSpec,
    n_obs: int,
    runs: int,
    methods: Sequence[str],
    K: int = 2,
    S: int = 10,
    grid=None,
    learner: Union[RegressorSpec, str, None] = None,
    level: float = 0.95,
    rng: pipeline.RngLike = 0,
    threads: int = 1,
    extra_methods: Optional[dict] = None,
) -> SimulationReport:
    """Coverage, rejection rate, and scaled CI lengths over ``runs`` datasets.

    Every method sees the same simulated datasets and, per repetition, the same
    residual folds. Coverage counts intervals containing ``spec.beta0``; the
    rejection rate is for the two-sided test of a zero coefficient at
    ``level``. Runs where a method fails numerically are excluded from that
    method's metrics and counted in ``n_failures``. ``learner`` may be a
    RegressorSpec or ``"oracle"`` (use the scenario's true conditional means).
    The report is a pure function of the seed.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    methods = list(methods)
    extra = dict(extra_methods or {})
    all_names = [m for m in methods if m not in extra]
    for m in all_names:
        if m not in pipeline.PIPELINE_METHODS:
            raise ValueError(f"unknown method {m!r}")
    if "DML" not in methods:
        # always computed: the scaled lengths are relative to the DML median
        methods = ["DML"] + methods
    seed = rng if isinstance(rng, int) else None
    run_seeds = pipeline.as_rng(rng).integers(0, 2**63, size=runs)
    if threads > 1 and runs > 1:
        outcomes = Parallel(n_jobs=threads)(
            delayed(_mc_one_run)(spec, n_obs, methods, K, S, grid, learner, level, int(s), extra)
            for s in run_seeds
        )
    else:
        outcomes = [
            _mc_one_run(spec, n_obs, methods, K, S, grid, learner, level, int(s), extra)
            for s in run_seeds
        ]

    dml_lengths = np.array(
        [
            float(r["DML"].ci_upper[0] - r["DML"].ci_lower[0])
            for r, _ in outcomes
            if "DML" in r
        ]
    )
    if dml_lengths.size == 0:
        raise RuntimeError("DML failed on every run; no length scale available")
    scale = float(np.median(dml_lengths))

    summaries = []
    for m in methods:
        covered, rejected, lengths = [], [], []
        n_fail = 0
        for results, failures in outcomes:
            if m in failures:
                n_fail += 1
                continue
            r = results[m]
            lo, hi = float(r.ci_lower[0]), float(r.ci_upper[0])
            covered.append(lo <= spec.beta0 <= hi)
            rejected.append(not (lo <= 0.0 <= hi))
            lengths.append((hi - lo) / scale)
        summaries.append(
            MethodSummary(
                method=m,
                coverage=float(np.mean(covered)) if covered else math.nan,
                rejection_rate=float(np.mean(rejected)) if rejected else math.nan,
                ci_length_scaled=tuple(lengths),
                n_failures=n_fail,
            )
        )
    return SimulationReport(
        scenario=spec.name,
        beta0=spec.beta0,
        methods=tuple(summaries),
        runs=runs,
        n_obs=n_obs,
        K=K,
        S=S,
        level=level,
        seed=seed,
    )


def _naive_one_run(spec, learner, n_obs, K, seed):
    from .data import ResidualFold

    rng = np.random.default_rng(seed)
    data = spec.generate(n_obs, rng)
    partition = partition_folds(n_obs, K, rng)
    folds = compute_residuals(data, partition, learner, rng)
    proper = float(dml2_estimate(folds)[0])
    naive_folds = [
        ResidualFold(RA=data.A[partition.folds[k]], RX=f.RX, RY=f.RY, fold_index=k)
        for k, f in enumerate(folds)
    ]
    naive = float(dml2_estimate(naive_folds)[0])
    return naive, proper


def naive_instrument_diagnostic(
    n_obs: int,
    runs: int,
    K: int,
    rng: pipeline.RngLike,
    threads: int = 1,
) -> Tuple[float, float]:
    """Mean standardized bias of the raw-instrument shortcut versus the proper estimator.

    Both estimators run on the high-dimensional-W scenario with the random
    forest learner (500 trees, minimum node size 5); the shortcut keeps the
    raw instrument columns in place of their cross-fitted residuals. Returns
    ``(naive, proper)`` where each entry is the mean of
    ``(beta_hat - beta0) / sd(beta_hat)`` over the runs.
    """
    spec = scenario("naive_instrument_sem")
    learner = RegressorSpec.forest(trees=500, min_node=5)
    run_seeds = pipeline.as_rng(rng).integers(0, 2**63, size=runs)
    if threads > 1 and runs > 1:
        pairs = Parallel(n_jobs=threads)(
            delayed(_naive_one_run)(spec, learner, n_obs, K, int(s)) for s in run_seeds
        )
    else:
        pairs = [_naive_one_run(spec, learner, n_obs, K, int(s)) for s in run_seeds]
    naive = np.array([p[0] for p in pairs])
    proper = np.array([p[1] for p in pairs])

    def std_bias(values: np.ndarray) -> float:
        sd = float(np.std(values, ddof=1)) if values.size > 1 else 1.0
        sd = sd if sd > 0 else 1.0
        return float(np.mean(values - spec.beta0) / sd)

    return std_bias(naive), std_bias(proper)
