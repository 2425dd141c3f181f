import numpy as np
import pytest

from odflow import (
    ConfigError,
    CovariateDesign,
    NBParams,
    ODMatrix,
    SimConfig,
    bias_survey_absolute,
    bias_survey_proportional,
    sample_counts,
    sample_regression_counts,
    spectral_decompose,
    subsample_survey,
    symmetrize,
)
from conftest import DEMO_TRUTH


class TestNBParams:
    def test_mean(self):
        nb = NBParams(r=5, p=0.4)
        assert nb.mean == pytest.approx(5 * 0.6 / 0.4)

    def test_validation(self):
        with pytest.raises(ConfigError, match="nb_r"):
            NBParams(r=0, p=0.4)
        with pytest.raises(ConfigError, match="nb_p"):
            NBParams(r=1, p=1.0)


class TestSampleCounts:
    def test_determinism(self, demo_truth):
        c1, o1 = sample_counts(demo_truth, 20, 42)
        c2, o2 = sample_counts(demo_truth, 20, 42)
        assert np.array_equal(c1, c2)
        assert np.array_equal(o1.y_dep, o2.y_dep)

    def test_zero_mean_draws_zero(self, demo_truth):
        counts, _ = sample_counts(demo_truth, 200, 1)
        assert np.all(counts[:, np.eye(5, dtype=bool)] == 0)
        truth2 = ODMatrix([[0, 0, 5], [0, 0, 5], [5, 5, 0]])
        counts2, _ = sample_counts(truth2, 200, 1)
        assert np.all(counts2[:, 0, 1] == 0)

    def test_margin_identity_every_day(self, demo_truth):
        counts, obs = sample_counts(demo_truth, 50, 9)
        assert np.array_equal(obs.y_dep, counts.sum(axis=2))
        assert np.array_equal(obs.y_arr, counts.sum(axis=1))
        assert np.array_equal(obs.y_dep.sum(axis=1), obs.y_arr.sum(axis=1))

    def test_poisson_clt_bound(self, demo_truth):
        T = 10000
        counts, _ = sample_counts(demo_truth, T, 123)
        m = counts.mean(axis=0)
        mask = DEMO_TRUTH > 0
        bound = 3 * np.sqrt(DEMO_TRUTH[mask] / T)
        ok = np.abs(m[mask] - DEMO_TRUTH[mask]) <= bound
        assert ok.mean() >= 0.95

    def test_negbin_variance(self):
        truth = ODMatrix([[0, 70], [70, 0]])
        counts, _ = sample_counts(truth, 10000, 77, family="negbin", nb_p=0.5)
        v = counts[:, 0, 1].var(ddof=1)
        assert v == pytest.approx(70 / 0.5, rel=0.1)

    def test_negbin_requires_p(self, demo_truth):
        with pytest.raises(ConfigError, match="nb_p"):
            sample_counts(demo_truth, 5, 0, family="negbin")


class TestSubsampleSurvey:
    def test_full_fraction_mean(self, demo_truth):
        reps = 400
        acc = np.zeros((5, 5))
        for r in range(reps):
            acc += subsample_survey(demo_truth, 1.0, 0.0, seed=1000 + r).entries
        m = acc / reps
        mask = DEMO_TRUTH > 0
        se = np.sqrt(DEMO_TRUTH[mask] / reps)
        assert np.all(np.abs(m[mask] - DEMO_TRUTH[mask]) < 5 * se)

    def test_sixth_fraction_entry_mean(self, demo_truth):
        reps = 600
        vals = [
            subsample_survey(demo_truth, 1 / 6, seed=2000 + r).entries[0, 1]
            for r in range(reps)
        ]
        # demo entry (1,2) mean 70/6 ~ 11.7; the fixture realization shows 11
        assert np.mean(vals) == pytest.approx(70 / 6, rel=0.05)

    def test_zero_truth(self):
        z = ODMatrix(np.zeros((3, 3)))
        out = subsample_survey(z, 0.5, seed=4)
        assert np.array_equal(out.entries, np.zeros((3, 3)))

    def test_determinism(self, demo_truth):
        a = subsample_survey(demo_truth, 0.25, seed=5).entries
        b = subsample_survey(demo_truth, 0.25, seed=5).entries
        assert np.array_equal(a, b)


class TestBiasSurveys:
    def test_absolute_eta_zero(self, demo_truth):
        out = bias_survey_absolute(demo_truth, 0.7, 0.0, seed=1)
        assert np.allclose(out.entries, 0.7 * DEMO_TRUTH)

    def test_absolute_noise_mean_is_max_entry(self, demo_truth):
        # alpha=1, eta=1: every off-diagonal entry gains Poisson(max M)=95 noise
        reps = 300
        acc = np.zeros((5, 5))
        for r in range(reps):
            acc += bias_survey_absolute(demo_truth, 1.0, 1.0, seed=300 + r).entries
        added = acc / reps - DEMO_TRUTH
        off = ~np.eye(5, dtype=bool)
        assert added[off].mean() == pytest.approx(95.0, rel=0.02)

    def test_absolute_alpha_zero(self, demo_truth):
        out = bias_survey_absolute(demo_truth, 0.0, 1.0, seed=2)
        assert np.array_equal(out.entries, np.zeros((5, 5)))

    def test_proportional_eta_zero(self, demo_truth):
        out = bias_survey_proportional(demo_truth, 0.4, 0.0, seed=3)
        assert np.allclose(out.entries, 0.4 * DEMO_TRUTH)

    def test_proportional_replication_mean(self, demo_truth):
        reps = 500
        alpha, eta = 0.8, 0.6
        acc = np.zeros((5, 5))
        for r in range(reps):
            acc += bias_survey_proportional(demo_truth, alpha, eta, seed=900 + r).entries
        expected = alpha * DEMO_TRUTH * (1 + eta)
        off = ~np.eye(5, dtype=bool)
        se = eta * np.sqrt(alpha * DEMO_TRUTH[off] / reps)
        assert np.all(np.abs(acc[off] / reps - expected[off]) < 6 * se)

    def test_proportional_zero_entries_stay_zero(self):
        truth = ODMatrix([[0, 0, 9], [0, 0, 9], [9, 9, 0]])
        out = bias_survey_proportional(truth, 1.0, 1.0, seed=8)
        assert out.entries[0, 1] == 0.0

    def test_absolute_breaks_structure_more(self, demo_truth):
        # mean principal angle of the leading eigenvector, 200 replications
        sf = spectral_decompose(DEMO_TRUTH)
        lead = sf.P[:, 0]

        def angle(matrix):
            v = spectral_decompose(symmetrize(matrix.entries)).P[:, 0]
            return np.arccos(min(1.0, abs(float(v @ lead))))

        a_angles = [
            angle(bias_survey_absolute(demo_truth, 1.0, 0.5, seed=10_000 + r))
            for r in range(200)
        ]
        p_angles = [
            angle(bias_survey_proportional(demo_truth, 1.0, 0.5, seed=10_000 + r))
            for r in range(200)
        ]
        assert np.mean(a_angles) > np.mean(p_angles)


class TestRegressionCounts:
    def test_no_covariates_matches_poisson_means(self, demo_truth):
        design = CovariateDesign(np.ones((4000, 1)))
        counts, _ = sample_regression_counts(demo_truth, [], design, seed=6)
        m = counts.mean(axis=0)
        mask = DEMO_TRUTH > 0
        se = np.sqrt(DEMO_TRUTH[mask] / 4000)
        assert np.all(np.abs(m[mask] - DEMO_TRUTH[mask]) < 5 * se)

    def test_binary_covariate_mean_difference(self, demo_truth):
        rng = np.random.default_rng(14)
        T = 4000
        x = rng.integers(0, 2, T).astype(float)
        design = CovariateDesign(np.column_stack([np.ones(T), x]))
        beta1 = np.full((5, 5), 10.0)
        np.fill_diagonal(beta1, 0.0)
        counts, _ = sample_regression_counts(demo_truth, [beta1], design, seed=15)
        on = counts[x == 1].mean(axis=0)
        off_days = counts[x == 0].mean(axis=0)
        off = ~np.eye(5, dtype=bool)
        assert (on - off_days)[off].mean() == pytest.approx(10.0, abs=0.5)

    def test_negative_mean_rejected(self, demo_truth):
        design = CovariateDesign(np.column_stack([np.ones(3), [0.0, 1.0, 0.0]]))
        bad = np.full((5, 5), -100.0)
        np.fill_diagonal(bad, 0.0)
        with pytest.raises(ConfigError, match="day"):
            sample_regression_counts(demo_truth, [bad], design, seed=0)


class TestSimConfig:
    def test_validation_names_fields(self, demo_truth):
        with pytest.raises(ConfigError, match="noise_level"):
            SimConfig(truth=demo_truth, noise_level=2.0).validate()
        with pytest.raises(ConfigError, match="days"):
            SimConfig(truth=demo_truth, days=0).validate()
        with pytest.raises(ConfigError, match="family"):
            SimConfig(truth=demo_truth, family="cauchy").validate()

    def test_file_round_trip(self, tmp_path, demo_truth):
        cfg = SimConfig(
            truth=demo_truth, days=17, family="negbin", nb_p=0.4, seed=99,
            survey_scale=0.25, noise_level=0.1, noise_kind="proportional",
            survey_days=50,
        ).validate()
        path = tmp_path / "sim.cfg"
        cfg.to_file(path)
        back = SimConfig.from_file(path)
        assert back.days == 17
        assert back.family == "negbin"
        assert back.nb_p == pytest.approx(0.4)
        assert back.survey_days == 50
        assert np.array_equal(back.truth.entries, cfg.truth.entries)
