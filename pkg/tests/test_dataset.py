import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medpost.dataset import (Dataset, OutlierPlan, SyntheticSpec,
                             generate_synthetic, inject_outliers, load_csv,
                             partition, standardize, take_rows,
                             with_intercept)
from medpost.errors import DataError


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_diabetes_shape(self):
        ds = load_csv("data/diabetes.csv", "progression")
        assert ds.x.shape == (442, 10)
        assert ds.y.shape == (442,)
        assert ds.column_names[0] == "age"

    def test_minimal_file(self, tmp_path):
        path = write_csv(tmp_path, "x1,y\n2.5,1.0\n")
        ds = load_csv(path, "y")
        assert ds.x.shape == (1, 1)
        assert ds.y[0] == 1.0

    def test_string_cell_names_row_and_column(self, tmp_path):
        path = write_csv(tmp_path, "x1,y\n1.0,2.0\nfoo,3.0\n")
        with pytest.raises(DataError, match=r"row 3.*'x1'"):
            load_csv(path, "y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            load_csv(tmp_path / "nope.csv", "y")

    def test_missing_response_column(self, tmp_path):
        path = write_csv(tmp_path, "x1,x2\n1,2\n")
        with pytest.raises(DataError, match="response column"):
            load_csv(path, "y")

    def test_empty_data(self, tmp_path):
        path = write_csv(tmp_path, "x1,y\n")
        with pytest.raises(DataError, match="no data rows"):
            load_csv(path, "y")

    def test_response_in_middle(self, tmp_path):
        path = write_csv(tmp_path, "x1,y,x2\n1,9,2\n3,8,4\n")
        ds = load_csv(path, "y")
        assert np.array_equal(ds.x, [[1, 2], [3, 4]])
        assert np.array_equal(ds.y, [9, 8])
        assert ds.column_names == ("x1", "x2")


class TestDatasetInvariants:
    def test_row_mismatch(self):
        with pytest.raises(DataError):
            Dataset(x=np.ones((3, 2)), y=np.ones(2))

    def test_non_finite(self):
        with pytest.raises(DataError):
            Dataset(x=np.array([[np.nan]]), y=np.ones(1))
        with pytest.raises(DataError):
            Dataset(x=np.ones((1, 1)), y=np.array([np.inf]))

    def test_immutable(self):
        ds = Dataset(x=np.ones((2, 2)), y=np.ones(2))
        with pytest.raises(ValueError):
            ds.x[0, 0] = 5.0


class TestStandardize:
    def test_hand_column(self):
        # centered [1,2,3] is [-1,0,1], norm sqrt(2)
        ds = Dataset(x=np.array([[1.0], [2.0], [3.0]]), y=np.zeros(3))
        out = standardize(ds)
        expect = np.array([-1, 0, 1]) / np.sqrt(2)
        np.testing.assert_allclose(out.x[:, 0], expect, atol=1e-15)
        assert np.array_equal(out.y, ds.y)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        ds = Dataset(x=rng.standard_normal((10, 3)), y=rng.standard_normal(10))
        once = standardize(ds)
        twice = standardize(once)
        np.testing.assert_allclose(once.x, twice.x, atol=1e-12)

    def test_constant_column_named(self):
        ds = Dataset(x=np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]),
                     y=np.zeros(3), column_names=("c", "x2"))
        with pytest.raises(DataError, match="c"):
            standardize(ds)


class TestGenerateSynthetic:
    def test_paper_scale(self):
        ds, beta = generate_synthetic(
            SyntheticSpec(n=5000, d=10, n_true=3, seed=7))
        assert ds.x.shape == (5000, 10)
        assert int(np.count_nonzero(beta)) == 3

    def test_noiseless_identity(self):
        beta = np.zeros(3)
        beta[0] = 1.0
        ds, _ = generate_synthetic(SyntheticSpec(
            n=50, d=3, n_true=1, noise_sd=0.0, beta_true=beta, seed=2))
        np.testing.assert_array_equal(ds.y, ds.x[:, 0])

    def test_deterministic(self):
        a, _ = generate_synthetic(SyntheticSpec(n=20, d=4, n_true=2, seed=11))
        b, _ = generate_synthetic(SyntheticSpec(n=20, d=4, n_true=2, seed=11))
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_wrong_beta_count(self):
        with pytest.raises(DataError):
            SyntheticSpec(n=5, d=3, n_true=1, beta_true=np.array([1.0, 2.0, 0.0]))


class TestPartition:
    def test_single_subset_identity(self):
        ds = Dataset(x=np.arange(10.0).reshape(10, 1), y=np.arange(10.0))
        part = partition(ds, 1, seed=3)
        assert np.array_equal(part.rows_of(0), np.arange(10))

    def test_balanced_sizes(self):
        ds = Dataset(x=np.ones((10, 1)), y=np.ones(10))
        part = partition(ds, 3, seed=0)
        assert sorted(part.sizes) == [3, 3, 4]

    def test_massive_balance(self):
        ds = Dataset(x=np.ones((10_000, 1)), y=np.ones(10_000))
        part = partition(ds, 50, seed=1)
        assert set(part.sizes) == {200}

    def test_bad_counts(self):
        ds = Dataset(x=np.ones((3, 1)), y=np.ones(3))
        with pytest.raises(DataError):
            partition(ds, 0, seed=0)
        with pytest.raises(DataError):
            partition(ds, 4, seed=0)

    @given(n=st.integers(1, 60), r=st.integers(1, 60), seed=st.integers(0, 2**32))
    @settings(max_examples=40, deadline=None)
    def test_bijection(self, n, r, seed):
        if r > n:
            return
        ds = Dataset(x=np.ones((n, 1)), y=np.arange(float(n)))
        part = partition(ds, r, seed=seed)
        all_rows = np.concatenate([part.rows_of(j) for j in range(r)])
        assert sorted(all_rows.tolist()) == list(range(n))
        assert part.sizes.max() - part.sizes.min() <= 1


class TestInjectOutliers:
    def test_hand_trace(self):
        # i* = argmax |y| = index 1 (value -3); v = -3 - 10000
        ds = Dataset(x=np.zeros((3, 1)), y=np.array([1.0, -3.0, 2.0]))
        out = inject_outliers(
            ds, OutlierPlan(count=1, magnitude=10000.0, target_indices=(0,)),
            seed=0)
        np.testing.assert_array_equal(out.y, [-10003.0, -3.0, 2.0])
        assert np.array_equal(out.x, ds.x)

    def test_count_zero_noop(self):
        ds = Dataset(x=np.ones((3, 1)), y=np.array([1.0, 2.0, 3.0]))
        out = inject_outliers(ds, OutlierPlan(count=0, magnitude=10.0), seed=0)
        assert np.array_equal(out.y, ds.y)

    def test_magnitude_zero_copies_extreme(self):
        ds = Dataset(x=np.ones((3, 1)), y=np.array([1.0, -3.0, 2.0]))
        out = inject_outliers(
            ds, OutlierPlan(count=1, magnitude=0.0, target_indices=(2,)),
            seed=0)
        assert out.y[2] == -3.0

    def test_changes_exactly_count_rows(self):
        rng = np.random.default_rng(0)
        ds = Dataset(x=rng.standard_normal((40, 2)), y=rng.standard_normal(40))
        out = inject_outliers(ds, OutlierPlan(count=7, magnitude=100.0), seed=5)
        assert int((out.y != ds.y).sum()) == 7
        assert np.array_equal(out.x, ds.x)

    def test_deterministic_targets(self):
        rng = np.random.default_rng(0)
        ds = Dataset(x=rng.standard_normal((30, 2)), y=rng.standard_normal(30))
        a = inject_outliers(ds, OutlierPlan(count=3, magnitude=9.0), seed=4)
        b = inject_outliers(ds, OutlierPlan(count=3, magnitude=9.0), seed=4)
        assert np.array_equal(a.y, b.y)

    def test_duplicate_targets_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            OutlierPlan(count=2, magnitude=1.0, target_indices=(1, 1))

    def test_count_exceeds_n(self):
        ds = Dataset(x=np.ones((2, 1)), y=np.ones(2))
        with pytest.raises(DataError):
            inject_outliers(ds, OutlierPlan(count=3, magnitude=1.0), seed=0)


class TestHelpers:
    def test_with_intercept(self):
        ds = Dataset(x=np.array([[2.0], [3.0]]), y=np.zeros(2))
        out = with_intercept(ds)
        assert out.column_names[0] == "(intercept)"
        assert np.array_equal(out.x[:, 0], [1.0, 1.0])

    def test_take_rows(self):
        ds = Dataset(x=np.arange(8.0).reshape(4, 2), y=np.arange(4.0))
        sub = take_rows(ds, [2, 0])
        assert np.array_equal(sub.y, [2.0, 0.0])
