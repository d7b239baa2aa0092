import numpy as np
import pandas as pd
import pytest

from conftest import random_panel, toy_schema
from qrmsm.api import AAIIWEstimator, FIPTMEstimator
from qrmsm.estimators import MSMParams, compute_weights
from qrmsm.exceptions import PositivityViolation, ResampleDegenerate
from qrmsm.inference import (
    BALANCE_COLUMNS,
    VarianceInputs,
    _bootstrap_one,
    _effect,
    asymptotic_variances,
    balance_table,
    bootstrap_ci,
)
from qrmsm.panel import PanelDataset
from qrmsm.simgen import DGPConfig, simulate_cohort, simulate_cohort_with_truth


def _symmetric_panel(mu0, mu1, n=8):
    """Complete data, e = 0.5, rho = 1, potential outcomes mu_a +- 1."""
    s = toy_schema(1)
    A = np.tile([0.0, 1.0], n // 2)
    sign = np.repeat([1.0, -1.0], n // 2)
    y0, y1 = mu0 + sign, mu1 + sign
    Y = np.where(A == 1, y1, y0)
    ds = PanelDataset(np.arange(n), np.zeros(n, int), A, np.ones(n), np.ones(n), Y,
                      np.zeros((n, 2)), np.zeros(n), np.zeros(n), s)
    return ds, y0, y1


class TestVariance:
    def test_hand_example_equals_four(self):
        ds, y0, y1 = _symmetric_panel(0.0, 0.0)
        inp = VarianceInputs(np.full(ds.n_rows, 0.5), np.ones(ds.n_rows), y0, y1)
        v = asymptotic_variances(ds, inp)
        assert v.sigma2_fiptm == pytest.approx(4.0, abs=1e-14)
        assert v.sigma2_aaiiw == v.sigma2_fiptm
        assert v.plug_in_inputs == "oracle"

    def test_fitted_mode_hand_example(self):
        ds, _, _ = _symmetric_panel(1.0, 3.0)
        inp = VarianceInputs(np.full(ds.n_rows, 0.5), np.ones(ds.n_rows))
        v = asymptotic_variances(ds, inp, MSMParams(1.0, 2.0))
        assert v.sigma2_fiptm == pytest.approx(4.0, abs=1e-14)
        # subtract mu_a^2 * mean((1 + e)/e) = 3 * (1 + 9)
        assert v.sigma2_aaiiw == pytest.approx(4.0 - 30.0, abs=1e-12)
        assert v.plug_in_inputs == "fitted"

    def test_aaiiw_smaller_when_means_nonzero(self):
        panel, truth = simulate_cohort_with_truth(DGPConfig.from_gamma_set("bernoulli", 3, 200), 1)
        v = asymptotic_variances(panel, VarianceInputs.from_truth(truth))
        assert v.mu1 != 0 and v.sigma2_aaiiw < v.sigma2_fiptm
        assert v.sigma2_fiptm >= 0

    def test_positivity(self):
        ds, y0, y1 = _symmetric_panel(0.0, 1.0)
        with pytest.raises(PositivityViolation):
            asymptotic_variances(ds, VarianceInputs(np.full(ds.n_rows, 1.0), np.ones(ds.n_rows), y0, y1))
        with pytest.raises(PositivityViolation):
            asymptotic_variances(ds, VarianceInputs(np.full(ds.n_rows, 0.5), np.zeros(ds.n_rows), y0, y1))


@pytest.fixture(scope="module")
def small_cohort():
    return simulate_cohort(DGPConfig.from_gamma_set("bernoulli", 1, 150), 99)


class TestBootstrap:
    def test_deterministic(self, small_cohort):
        est = FIPTMEstimator()
        a = bootstrap_ci(small_cohort, est, B=100, seed=5)
        b = bootstrap_ci(small_cohort, est, B=100, seed=5)
        assert (a.lower, a.upper) == (b.lower, b.upper)
        assert np.array_equal(a.estimates, b.estimates)
        assert a.lower <= a.estimate <= a.upper

    def test_jobs_do_not_change_result(self, small_cohort):
        est = FIPTMEstimator()
        a = bootstrap_ci(small_cohort, est, B=100, seed=5)
        b = bootstrap_ci(small_cohort, est, B=100, seed=5, jobs=2)
        assert np.array_equal(a.estimates, b.estimates)

    def test_two_subjects_degenerate(self, rng):
        ds = random_panel(rng, n_subjects=2, n_bins=10, p_obs=0.9)
        with pytest.raises(ResampleDegenerate):
            bootstrap_ci(ds, FIPTMEstimator(propensity="1", observation="A"), B=100, seed=0)

    def test_needs_at_least_100(self, small_cohort):
        with pytest.raises(ValueError):
            bootstrap_ci(small_cohort, FIPTMEstimator(), B=50)

    def test_subject_exchangeable(self, small_cohort):
        # permuting subjects and mapping the index stream through the permutation
        # gives the same multiset of resample estimates
        ds = small_cohort
        perm = np.random.default_rng(3).permutation(ds.n_subjects)
        shuffled = ds.take_subjects(perm, relabel=False)
        est = FIPTMEstimator()
        direct, mapped = [], []
        for b in range(5):
            direct.append(_bootstrap_one((ds, est, 11, b)))
            idx = np.random.default_rng(np.random.SeedSequence(11, spawn_key=(b,))).integers(
                0, ds.n_subjects, ds.n_subjects)
            inv = np.argsort(perm)
            mapped.append(_effect(est, shuffled.take_subjects(inv[idx])))
        assert np.allclose(np.sort(direct), np.sort(mapped), atol=1e-10, rtol=0)

    def test_callable_pipeline(self, small_cohort):
        ci = bootstrap_ci(small_cohort, lambda p: float(AAIIWEstimator().fit(p).coef_[1]), B=100, seed=1)
        assert ci.replicates == 100 and ci.skipped == 0


class TestBalance:
    def test_unit_weights_match_groupby(self, rng):
        ds = random_panel(rng, n_subjects=50)
        tab = balance_table(ds, None, "treatment")
        df = ds.to_frame()
        df = df[df.at_risk == 1]
        ref = df.groupby("treatment")[["K1", "K2", "M", "P"]].agg(["mean", "std"])
        for cov in ("K1", "K2", "M", "P"):
            for s in (0, 1):
                row = tab.get(cov, s)
                assert row.unweighted_mean == pytest.approx(ref.loc[s, (cov, "mean")], rel=1e-12)
                assert row.unweighted_sd == pytest.approx(ref.loc[s, (cov, "std")], rel=1e-12)
                assert row.weighted_mean == row.unweighted_mean and row.weighted_sd == row.unweighted_sd

    def test_ipt_weights_restore_balance(self):
        cfg = DGPConfig.from_gamma_set("bernoulli", 1, 5000)
        panel, truth = simulate_cohort_with_truth(cfg, 8)
        w = compute_weights(panel, truth.e1, None)
        tab = balance_table(panel, w, "treatment", ["K1"])
        raw = abs(tab.get("K1", 1).unweighted_mean - tab.get("K1", 0).unweighted_mean)
        adj = abs(tab.get("K1", 1).weighted_mean - tab.get("K1", 0).weighted_mean)
        assert raw > 0.3 and adj < 0.05

    def test_doubled_subject_counts_twice(self):
        s = toy_schema(1)
        ds = PanelDataset([0, 1, 2], [0, 0, 0], [1, 1, 1], [1, 1, 1], [1, 1, 1], [0.0, 0.0, 0.0],
                          np.array([[1.0, 0], [2.0, 0], [6.0, 0]]), np.zeros(3), np.zeros(3), s)
        row = balance_table(ds, np.array([1.0, 2.0, 1.0]), "treatment", ["K1"]).get("K1", 1)
        # sample 1, 2, 2, 6: mean 11/4, sd^2 = (3.0625 + 0.5625*2 + 10.5625)/3
        assert row.weighted_mean == pytest.approx(11 / 4, abs=1e-15)
        assert row.weighted_sd == pytest.approx(np.std([1, 2, 2, 6], ddof=1), abs=1e-15)

    def test_csv_columns(self, rng, tmp_path):
        ds = random_panel(rng)
        balance_table(ds, stratify_by="observed").to_csv(tmp_path / "b.csv")
        df = pd.read_csv(tmp_path / "b.csv")
        assert tuple(df.columns) == BALANCE_COLUMNS
        assert len(df) == 2 * len(ds.schema.covariates)
