import numpy as np
import pytest

from medpost.dataset import load_csv
from medpost.engine import UniverseSpec
from medpost.errors import ConfigError, DataError
from medpost.experiments import (ExperimentSpec, MetricRecord, rmse,
                                 run_bigdata, run_contamination,
                                 run_coef_coverage, run_coverage,
                                 run_experiment, run_magnitude, run_realdata,
                                 true_beta)

SMALL = dict(n_train=300, d=4, n_true=2, mcmc_iterations=80, mcmc_burn_in=30,
             universe=UniverseSpec(mode="fixed_size", size=2), workers=1,
             n_test=8, methods=("bma", "aic"))


class TestRmse:
    def test_identical(self):
        assert rmse(np.ones(4), np.ones(4)) == 0.0

    def test_constant_shift(self):
        assert rmse(np.zeros(5) + 2.0, np.zeros(5)) == pytest.approx(2.0)

    def test_hand_value(self):
        pred = np.array([1.0, 2.0, 3.0])
        truth = np.array([0.0, 2.0, 5.0])
        assert rmse(pred, truth) == pytest.approx(np.sqrt((1 + 0 + 4) / 3))

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            rmse(np.ones(2), np.ones(3))
        with pytest.raises(DataError):
            rmse(np.ones(0), np.ones(0))


class TestTrueBeta:
    def test_default_pattern(self):
        beta = true_beta(10, 3)
        assert np.flatnonzero(beta).tolist() == [0, 4, 9]
        assert beta[[0, 4, 9]].tolist() == [3.0, 1.5, 2.0]

    def test_all_active(self):
        beta = true_beta(3, 3)
        assert (beta != 0).all()


class TestContaminationSmoke:
    def test_runs_and_is_deterministic(self):
        spec = ExperimentSpec(kind="contamination", trials=2,
                              outlier_grid=(0, 2), r_values=(1, 4),
                              base_seed=5, **SMALL)
        a = run_contamination(spec)
        b = run_contamination(spec)
        assert [r for r in a.records_sorted()] == [r for r in b.records_sorted()]
        assert len(a.records) == 2 * 2 * 2 * 2  # trials x grid x r x methods
        assert set(a.checks) and "contamination" in a.figures

    def test_pinned_outliers_land_in_one_subset(self):
        spec = ExperimentSpec(kind="contamination", trials=1,
                              outlier_grid=(3,), r_values=(3,), base_seed=2,
                              pin_to_single_subset=True, **SMALL)
        res = run_contamination(spec)
        assert all(np.isfinite(r.rmse) for r in res.records)

    def test_kind_mismatch(self):
        with pytest.raises(ConfigError):
            run_contamination(ExperimentSpec(kind="magnitude"))


class TestMagnitudeSmoke:
    def test_runs(self):
        spec = ExperimentSpec(kind="magnitude", trials=2,
                              outlier_grid=(0.0, 50.0), r_values=(1, 3),
                              base_seed=1, **SMALL)
        res = run_magnitude(spec)
        grids = {r.grid_value for r in res.records}
        assert grids == {0.0, 50.0}
        assert any(k.startswith("flat_rmse") for k in res.checks)


class TestCoverageSmoke:
    def test_records_have_intervals(self):
        spec = ExperimentSpec(kind="coverage", trials=3,
                              outlier_grid=(0.0,), r_values=(1, 2),
                              base_seed=3, **SMALL)
        res = run_coverage(spec)
        assert all(r.covered is not None for r in res.records)
        assert all(r.interval_width > 0 for r in res.records)


class TestCoefCoverageSmoke:
    def test_both_strategies_recorded(self):
        spec = ExperimentSpec(kind="coef_coverage", trials=2,
                              r_values=(1, 3), base_seed=4, **SMALL)
        res = run_coef_coverage(spec)
        strategies = {r.strategy for r in res.records}
        assert strategies == {"model_combination", "estimate_combination"}
        assert any(r.selected_correct is not None for r in res.records)
        assert any(r.detail.startswith("beta_") for r in res.records)


class TestBigdataSmoke:
    def test_wall_times_recorded(self):
        spec = ExperimentSpec(kind="bigdata", trials=1,
                              outlier_grid=(0, 2), r_values=(1, 2),
                              base_seed=6, **SMALL)
        res = run_bigdata(spec)
        assert all(r.wall_seconds > 0 for r in res.records)
        assert "wall_time_strictly_decreasing_in_r" in res.checks


class TestRealdataSmoke:
    def test_diabetes_smoke(self):
        ds = load_csv("data/diabetes.csv", "progression")
        spec = ExperimentSpec(kind="realdata", trials=1, n_test=10,
                              r_values=(1, 2), base_seed=7,
                              methods=("bma",), mcmc_iterations=60,
                              mcmc_burn_in=20, workers=1)
        res = run_realdata(spec, ds)
        assert len(res.records) == 2 * 10  # r values x points
        assert "realdata" in res.figures

    def test_dispatch(self):
        with pytest.raises(ConfigError):
            run_experiment(ExperimentSpec(kind="realdata"))


class TestMetricRecord:
    def test_rejects_nan(self):
        with pytest.raises(DataError):
            MetricRecord(method="bma", r=1, grid_value=0.0, trial=0,
                         rmse=float("nan"))
