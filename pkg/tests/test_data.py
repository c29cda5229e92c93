import numpy as np
import pytest

from regsdml import Dataset, EstimateResult, partition_folds
from regsdml.data import FoldPartition


class TestPartitionFolds:
    def test_even_split(self, rng):
        p = partition_folds(4, 2, rng)
        assert sorted(f.size for f in p.folds) == [2, 2]
        assert np.array_equal(np.sort(np.concatenate(p.folds)), np.arange(4))

    def test_rounding_split(self, rng):
        p = partition_folds(5, 2, rng)
        assert sorted(f.size for f in p.folds) == [2, 3]

    def test_deterministic_given_seed(self):
        p1 = partition_folds(6, 2, np.random.default_rng(7))
        p2 = partition_folds(6, 2, np.random.default_rng(7))
        for f1, f2 in zip(p1.folds, p2.folds):
            assert np.array_equal(f1, f2)

    @pytest.mark.parametrize("n,k", [(10, 1), (10, 3), (10, 10), (17, 4), (2, 2)])
    def test_partition_property(self, n, k):
        p = partition_folds(n, k, np.random.default_rng(n * 31 + k))
        assert np.array_equal(np.sort(np.concatenate(p.folds)), np.arange(n))
        sizes = [f.size for f in p.folds]
        assert max(sizes) - min(sizes) <= 1

    def test_invalid_k(self, rng):
        with pytest.raises(ValueError):
            partition_folds(3, 4, rng)
        with pytest.raises(ValueError):
            partition_folds(3, 0, rng)


class TestDataset:
    def test_shapes_and_coercion(self, rng):
        d = Dataset(A=rng.normal(size=5), X=rng.normal(size=5), W=rng.normal(size=5),
                    Y=rng.normal(size=5))
        assert d.A.shape == (5, 1) and d.q == d.d == d.v == 1 and d.n_obs == 5

    def test_row_mismatch(self, rng):
        with pytest.raises(ValueError, match="row mismatch"):
            Dataset(A=rng.normal(size=5), X=rng.normal(size=4), W=rng.normal(size=5),
                    Y=rng.normal(size=5))

    def test_underidentified(self, rng):
        with pytest.raises(ValueError, match="underidentified"):
            Dataset(A=rng.normal(size=(5, 1)), X=rng.normal(size=(5, 2)),
                    W=rng.normal(size=5), Y=rng.normal(size=5))

    def test_nonfinite_rejected(self, rng):
        A = rng.normal(size=5)
        A[2] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(A=A, X=rng.normal(size=5), W=rng.normal(size=5), Y=rng.normal(size=5))


class TestFoldPartition:
    def test_rejects_overlap(self):
        with pytest.raises(ValueError):
            FoldPartition(folds=(np.array([0, 1]), np.array([1, 2])), n_obs=3)

    def test_rejects_uneven(self):
        with pytest.raises(ValueError):
            FoldPartition(folds=(np.array([0]), np.array([1, 2, 3])), n_obs=4)


class TestEstimateResult:
    def test_valid(self):
        r = EstimateResult(beta=[1.0], sigma2=[[4.0]], ci_lower=[0.0], ci_upper=[2.0],
                           method="DML", n_obs=100)
        assert r.std_error[0] == pytest.approx(0.2)

    def test_asymmetric_sigma_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            EstimateResult(beta=[1.0, 1.0], sigma2=[[1.0, 0.5], [0.0, 1.0]],
                           ci_lower=[0.0, 0.0], ci_upper=[2.0, 2.0],
                           method="DML2", n_obs=10)

    def test_ci_must_bracket(self):
        with pytest.raises(ValueError, match="bracket"):
            EstimateResult(beta=[1.0], sigma2=[[1.0]], ci_lower=[1.5], ci_upper=[2.0],
                           method="DML", n_obs=10)

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="method"):
            EstimateResult(beta=[1.0], sigma2=[[1.0]], ci_lower=[0.0], ci_upper=[2.0],
                           method="OLS", n_obs=10)
