"""Nuisance regression learners for the conditional means of A, X, and Y given W.

Two learners are provided: an additive cubic B-spline regressor fitted by
penalized least squares, and a from-scratch random forest. Both fit one model
per target column and expose vectorized prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.interpolate import BSpline

from . import _forest

_SPLINE_DEGREE = 3
_RIDGE_REL = 1e-8

_KIND_ALIASES = {
    "spline": "spline",
    "splineadditive": "spline",
    "forest": "forest",
    "randomforest": "forest",
    "rf": "forest",
}


@dataclass(frozen=True)
class RegressorSpec:
    """Configuration of a nuisance learner.

    ``kind`` is ``"spline"`` (additive cubic B-splines) or ``"forest"``
    (bagged regression trees). ``spline_df`` and ``forest_mtry`` accept
    ``"auto"``: the spline then uses ``ceil(m**0.2) + 2`` degrees of freedom
    per coordinate and the forest ``max(1, v // 3)`` candidate features per
    split.
    """

    kind: str = "spline"
    forest_trees: int = 500
    forest_min_node: int = 5
    forest_mtry: Union[int, str] = "auto"
    spline_df: Union[int, str] = "auto"

    def __post_init__(self):
        kind = _KIND_ALIASES.get(str(self.kind).replace("_", "").lower())
        if kind is None:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.forest_trees < 1:
            raise ValueError("forest_trees must be >= 1")
        if self.forest_min_node < 1:
            raise ValueError("forest_min_node must be >= 1")
        if self.forest_mtry != "auto" and int(self.forest_mtry) < 1:
            raise ValueError("forest_mtry must be >= 1 or 'auto'")
        if self.spline_df != "auto" and int(self.spline_df) < 4:
            raise ValueError("explicit spline_df must be >= 4 (cubic basis minimum)")

    @classmethod
    def spline(cls, df: Union[int, str] = "auto") -> "RegressorSpec":
        return cls(kind="spline", spline_df=df)

    @classmethod
    def forest(
        cls, trees: int = 500, min_node: int = 5, mtry: Union[int, str] = "auto"
    ) -> "RegressorSpec":
        return cls(kind="forest", forest_trees=trees, forest_min_node=min_node, forest_mtry=mtry)


def spline_df(n_train: int) -> int:
    """Degrees of freedom of the additive spline basis, ``ceil(n**0.2) + 2``.

    The fifth root is resolved in integer arithmetic so that exact powers
    (e.g. 32) do not get pushed up by floating-point noise.
    """
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    m = max(1, int(math.ceil(n_train**0.2)))
    while (m - 1) ** 5 >= n_train:
        m -= 1
    while m**5 < n_train:
        m += 1
    return m + 2


def _spline_knots(x: np.ndarray, df: int) -> tuple[np.ndarray, float, float]:
    """Clamped cubic knot vector with interior knots at equispaced quantiles."""
    lo = float(np.min(x))
    hi = float(np.max(x))
    if hi - lo < 1e-12:
        # degenerate column: widen artificially so the basis stays well defined
        lo -= 0.5
        hi += 0.5
    n_interior = df - _SPLINE_DEGREE - 1
    if n_interior > 0:
        probs = np.arange(1, n_interior + 1) / (n_interior + 1)
        interior = np.quantile(x, probs)
        interior = np.clip(interior, lo, hi)
    else:
        interior = np.empty(0)
    knots = np.concatenate(
        [np.full(_SPLINE_DEGREE + 1, lo), np.sort(interior), np.full(_SPLINE_DEGREE + 1, hi)]
    )
    return knots, lo, hi


def _spline_design(W: np.ndarray, knots: list, bounds: list) -> np.ndarray:
    cols = []
    for j in range(W.shape[1]):
        lo, hi = bounds[j]
        x = np.clip(W[:, j], lo, hi)
        B = BSpline.design_matrix(x, knots[j], _SPLINE_DEGREE, extrapolate=False)
        cols.append(B.toarray())
    return np.hstack(cols)


class FittedRegressor:
    """A trained nuisance learner; use :meth:`predict` on new covariates."""

    def __init__(self, kind: str, n_features: int, n_targets: int):
        self.kind = kind
        self.n_features = n_features
        self.n_targets = n_targets

    def predict(self, W_new: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_query(self, W_new: np.ndarray) -> np.ndarray:
        W_new = np.asarray(W_new, dtype=float)
        if W_new.ndim == 1:
            W_new = W_new[:, None]
        if W_new.shape[1] != self.n_features:
            raise ValueError(
                f"query has {W_new.shape[1]} columns; model was fitted on {self.n_features}"
            )
        return W_new


class _SplineModel(FittedRegressor):
    def __init__(self, knots, bounds, coef, offset, n_features, n_targets):
        super().__init__("spline", n_features, n_targets)
        self._knots = knots
        self._bounds = bounds
        self._coef = coef  # (total basis columns, n_targets)
        self._offset = offset  # (n_targets,) target means, added back on predict

    def predict(self, W_new: np.ndarray) -> np.ndarray:
        W_new = self._check_query(W_new)
        design = _spline_design(W_new, self._knots, self._bounds)
        return design @ self._coef + self._offset


class _ForestModel(FittedRegressor):
    def __init__(self, forests, n_features, n_targets):
        super().__init__("forest", n_features, n_targets)
        self._forests = forests  # one flat-array tuple per target column

    def predict(self, W_new: np.ndarray) -> np.ndarray:
        W_new = np.ascontiguousarray(self._check_query(W_new))
        out = np.empty((W_new.shape[0], self.n_targets))
        for c, trees in enumerate(self._forests):
            out[:, c] = _forest.predict_forest(W_new, *trees)
        return out


def fit(
    spec: RegressorSpec, W: np.ndarray, target: np.ndarray, rng: np.random.Generator
) -> FittedRegressor:
    """Fit one model per target column on covariates ``W``.

    The spline learner solves ridge-jittered normal equations on the
    column-wise union of per-coordinate cubic B-spline bases (the jitter is
    ``1e-8`` times the mean Gram diagonal, which resolves the rank deficiency
    caused by duplicated covariate values or by the constant function lying in
    every coordinate's basis span). The forest learner draws all of its
    randomness from ``rng``, one substream per tree.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[:, None]
    m, v = W.shape
    if target.shape[0] != m:
        raise ValueError("W and target must have the same number of rows")
    if m < 2:
        raise ValueError(f"need at least 2 training rows, got {m}")

    if spec.kind == "spline":
        df = spline_df(m) if spec.spline_df == "auto" else int(spec.spline_df)
        if m < df:
            raise ValueError(f"spline fit needs m >= {df} rows, got {m}")
        knots, bounds = [], []
        for j in range(v):
            t, lo, hi = _spline_knots(W[:, j], df)
            knots.append(t)
            bounds.append((lo, hi))
        design = _spline_design(W, knots, bounds)
        gram = design.T @ design
        gram[np.diag_indices_from(gram)] += _RIDGE_REL * float(np.mean(np.diag(gram)))
        offset = target.mean(axis=0)
        coef = np.linalg.solve(gram, design.T @ (target - offset))
        return _SplineModel(knots, bounds, coef, offset, v, target.shape[1])

    mtry = max(1, v // 3) if spec.forest_mtry == "auto" else int(spec.forest_mtry)
    Wc = np.ascontiguousarray(W)
    forests = []
    for c in range(target.shape[1]):
        seeds = rng.integers(0, 2**64, size=spec.forest_trees, dtype=np.uint64)
        trees = _forest.build_forest(
            Wc, np.ascontiguousarray(target[:, c]), spec.forest_trees, spec.forest_min_node, mtry, seeds
        )
        forests.append(trees)
    return _ForestModel(forests, v, target.shape[1])
