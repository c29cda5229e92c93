import numpy as np
import pytest

from regsdml import RegressorSpec, fit, spline_df
from regsdml.learners import _spline_design


class TestSplineDf:
    def test_paper_value_100(self):
        assert spline_df(100) == 5  # ceil(100**0.2) = 3

    def test_exact_fifth_power(self):
        assert spline_df(32) == 4  # 32**0.2 == 2 exactly

    def test_single_row(self):
        assert spline_df(1) == 3

    @pytest.mark.parametrize("n,expected", [(2, 4), (31, 4), (33, 5), (243, 5), (244, 6)])
    def test_boundaries(self, n, expected):
        assert spline_df(n) == expected


class TestRegressorSpec:
    def test_kind_aliases(self):
        assert RegressorSpec(kind="RandomForest").kind == "forest"
        assert RegressorSpec(kind="SplineAdditive").kind == "spline"

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            RegressorSpec(kind="boosting")

    def test_spline_df_minimum(self):
        with pytest.raises(ValueError):
            RegressorSpec(kind="spline", spline_df=3)


class TestSplineFit:
    def test_constant_target(self, rng):
        W = rng.uniform(size=(60, 2))
        model = fit(RegressorSpec.spline(), W, np.full(60, 2.5), rng)
        assert np.max(np.abs(model.predict(W) - 2.5)) < 1e-8

    def test_reproduces_linear_function(self, rng):
        # cubic splines contain linear functions; oracle: the linear fit itself
        W = rng.uniform(size=(200, 1))
        target = 3.0 * W[:, 0]
        model = fit(RegressorSpec.spline(), W, target, rng)
        assert np.max(np.abs(model.predict(W)[:, 0] - target)) < 1e-6

    def test_matches_direct_least_squares(self, rng):
        # same basis solved by unregularized lstsq must agree on a smooth target
        W = rng.uniform(size=(150, 1))
        y = np.sin(3 * W[:, 0])
        model = fit(RegressorSpec.spline(), W, y, rng)
        design = _spline_design(W, model._knots, model._bounds)
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        assert np.max(np.abs(model.predict(W)[:, 0] - design @ coef)) < 1e-6

    def test_prediction_on_training_equals_fit(self, rng):
        W = rng.uniform(size=(80, 1))
        y = np.cos(W[:, 0])
        model = fit(RegressorSpec.spline(), W, y, rng)
        assert np.array_equal(model.predict(W), model.predict(W.copy()))

    def test_out_of_range_clamps_to_boundary(self, rng):
        W = rng.uniform(size=(100, 1))
        y = W[:, 0] ** 2
        model = fit(RegressorSpec.spline(), W, y, rng)
        hi = W[:, 0].max()
        beyond = model.predict(np.array([[hi + 1.0]]))
        at_edge = model.predict(np.array([[hi]]))
        assert np.isfinite(beyond).all()
        assert beyond == pytest.approx(at_edge)

    def test_row_permutation_invariance(self, rng):
        W = rng.uniform(size=(90, 2))
        y = W[:, 0] - W[:, 1] ** 2
        perm = rng.permutation(90)
        m1 = fit(RegressorSpec.spline(), W, y, rng)
        m2 = fit(RegressorSpec.spline(), W[perm], y[perm], rng)
        grid = rng.uniform(size=(20, 2))
        assert np.allclose(m1.predict(grid), m2.predict(grid), atol=1e-8)

    def test_residuals_orthogonal_to_design(self, rng):
        W = rng.uniform(size=(120, 2))
        y = np.sin(2 * W[:, 0]) + W[:, 1]
        model = fit(RegressorSpec.spline(), W, y, rng)
        design = _spline_design(W, model._knots, model._bounds)
        resid = y - model.predict(W)[:, 0]
        col_norms = np.linalg.norm(design, axis=0)
        assert np.max(np.abs(design.T @ resid) / col_norms) < 1e-6 * np.linalg.norm(resid) + 1e-9

    def test_multi_target_columns_independent(self, rng):
        W = rng.uniform(size=(70, 1))
        T = np.column_stack([W[:, 0], 2 * W[:, 0]])
        model = fit(RegressorSpec.spline(), W, T, rng)
        single = fit(RegressorSpec.spline(), W, T[:, 0], rng)
        assert np.allclose(model.predict(W)[:, 0], single.predict(W)[:, 0])

    def test_too_few_rows(self, rng):
        with pytest.raises(ValueError):
            fit(RegressorSpec.spline(df=6), np.ones((4, 1)), np.ones(4), rng)


class TestForestFit:
    def test_constant_target_exact(self, rng):
        W = rng.uniform(size=(40, 2))
        model = fit(RegressorSpec.forest(trees=25), W, np.full(40, -1.5), rng)
        assert np.all(model.predict(W) == -1.5)

    def test_same_seed_identical(self, rng):
        W = rng.uniform(size=(60, 2))
        y = W[:, 0] + rng.normal(size=60)
        m1 = fit(RegressorSpec.forest(trees=500, min_node=5), W, y, np.random.default_rng(3))
        m2 = fit(RegressorSpec.forest(trees=500, min_node=5), W, y, np.random.default_rng(3))
        grid = rng.uniform(size=(30, 2))
        assert np.array_equal(m1.predict(grid), m2.predict(grid))

    def test_learns_smooth_signal(self, rng):
        W = rng.uniform(size=(400, 1))
        y = np.sin(5 * W[:, 0])
        model = fit(RegressorSpec.forest(trees=200), W, y, rng)
        mse = np.mean((model.predict(W)[:, 0] - y) ** 2)
        assert mse < 0.05

    def test_permutation_shift_within_forest_spread(self, rng):
        # bootstrap draws depend on row order, so only statistical stability holds
        W = rng.uniform(size=(500, 2))
        y = W[:, 0] * W[:, 1] + 0.2 * rng.normal(size=500)
        grid = rng.uniform(size=(50, 2))
        base = fit(RegressorSpec.forest(trees=200), W, y, np.random.default_rng(0))
        perm = rng.permutation(500)
        permuted = fit(RegressorSpec.forest(trees=200), W[perm], y[perm], np.random.default_rng(0))
        reseeded = fit(RegressorSpec.forest(trees=200), W, y, np.random.default_rng(1))
        spread = np.sqrt(np.mean((base.predict(grid) - reseeded.predict(grid)) ** 2))
        shift = np.sqrt(np.mean((base.predict(grid) - permuted.predict(grid)) ** 2))
        assert shift < 3.0 * spread

    def test_min_node_respected_via_smoothness(self, rng):
        # larger leaves => coarser fit => larger training error
        W = rng.uniform(size=(300, 1))
        y = np.sin(8 * W[:, 0])
        fine = fit(RegressorSpec.forest(trees=100, min_node=1), W, y, np.random.default_rng(4))
        coarse = fit(RegressorSpec.forest(trees=100, min_node=60), W, y, np.random.default_rng(4))
        err_fine = np.mean((fine.predict(W)[:, 0] - y) ** 2)
        err_coarse = np.mean((coarse.predict(W)[:, 0] - y) ** 2)
        assert err_fine < err_coarse

    def test_dimension_mismatch_on_predict(self, rng):
        W = rng.uniform(size=(30, 2))
        model = fit(RegressorSpec.forest(trees=10), W, W[:, 0], rng)
        with pytest.raises(ValueError, match="columns"):
            model.predict(np.ones((5, 3)))
