import numpy as np
import pytest

from odflow import (
    NumericError,
    SimConfig,
    cvm_normality,
    mse,
    replicate_experiment,
    robustness_sweep,
)
from odflow.stats import results_to_csv
from conftest import DEMO_TRUTH


class TestMse:
    def test_perfect_estimates(self):
        truth = np.array([1.0, 2.0, 3.0])
        m, v = mse([truth, truth, truth], truth)
        assert m == 0.0 and v == 0.0

    def test_unit_offset_single_estimate(self):
        truth = np.array([1.0, 2.0])
        m, v = mse([truth + 1], truth)
        assert m == 1.0 and v == 0.0

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(83)
        truth = rng.normal(size=6)
        ests = rng.normal(size=(100, 6))
        m, v = mse(ests, truth)
        # independent streaming two-pass computation
        per_rep = []
        for row in ests:
            acc = 0.0
            for a, b in zip(row, truth):
                acc += (a - b) ** 2
            per_rep.append(acc / len(truth))
        m2 = sum(per_rep) / len(per_rep)
        v2 = sum((x - m2) ** 2 for x in per_rep) / (len(per_rep) - 1)
        assert m == pytest.approx(m2, rel=1e-12)
        assert v == pytest.approx(v2, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse([[1.0, 2.0]], [1.0, 2.0, 3.0])


class TestReplicateExperiment:
    def test_deterministic_single_replication(self, demo_truth):
        cfg = SimConfig(truth=demo_truth, days=30, seed=77).validate()
        a = replicate_experiment(cfg, method="mle", replications=1)
        b = replicate_experiment(cfg, method="mle", replications=1)
        assert a.mse == b.mse
        assert a.matrix_mse == b.matrix_mse

    def test_adhoc_method_runs(self, demo_truth):
        cfg = SimConfig(truth=demo_truth, days=20, seed=3).validate()
        res = replicate_experiment(cfg, method="adhoc", replications=5)
        assert res.mse >= 0
        assert res.replications == 5

    def test_jobs_parallel_matches_serial(self, demo_truth):
        cfg = SimConfig(truth=demo_truth, days=15, seed=11).validate()
        serial = replicate_experiment(cfg, method="gaussian", replications=8, jobs=1)
        parallel = replicate_experiment(cfg, method="gaussian", replications=8, jobs=2)
        assert serial.mse == pytest.approx(parallel.mse, rel=1e-12)


class TestGaussianScaling:
    def test_inverse_t_scaling_with_exact_prior(self, demo_truth):
        # eta=0 contamination survey leaves the prior exact: MSE ~ 1/T
        cfg = SimConfig(
            truth=demo_truth, seed=5, survey_kind="proportional",
            survey_scale=1.0, noise_level=0.0,
        ).validate()
        Ts = [30, 200, 2000]
        vals = []
        for T in Ts:
            from dataclasses import replace

            res = replicate_experiment(replace(cfg, days=T), "gaussian", 120)
            vals.append(res.mse)
        slope = np.polyfit(np.log(Ts), np.log(vals), 1)[0]
        assert -1.3 <= slope <= -0.7


class TestRobustnessSweep:
    def test_eta_zero_baseline_equality(self, demo_truth):
        rows = robustness_sweep(
            demo_truth, etas=[0.0], Ts=[50], methods=("gaussian", "adhoc"),
            replications=10, noise_kinds=("absolute", "proportional"), seed=19,
        )
        by = {(r.noise_kind, r.method): r for r in rows}
        # with no noise both kinds give the identical deterministic survey
        for method in ("gaussian", "adhoc"):
            a = by[("absolute", method)]
            p = by[("proportional", method)]
            assert a.mse == pytest.approx(p.mse, rel=1e-9)

    def test_grid_shape_and_csv(self, demo_truth, tmp_path):
        rows = robustness_sweep(
            demo_truth, etas=[0.0, 0.5], Ts=[20, 40], methods=("gaussian", "adhoc"),
            replications=3, noise_kinds=("absolute", "proportional"), seed=23,
        )
        assert len(rows) == 2 * 2 * 2 * 2
        out = tmp_path / "rob.csv"
        results_to_csv(rows, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("method,noise_kind,alpha,eta,T,replications,mse")
        assert len(lines) == 1 + len(rows)


class TestCvmNormality:
    def test_hand_fixed_sample_matches_formula(self):
        x = np.array([0.5, 1.5, 0.2, 3.1, 2.2, 1.1, 0.9, 1.8, 2.7, 0.4])
        stat, p = cvm_normality(x)
        # literal evaluation of the W^2 sum
        from scipy.stats import norm

        xs = np.sort(x)
        z = (xs - xs.mean()) / xs.std(ddof=1)
        n = len(xs)
        w2 = 1 / (12 * n)
        for i, zi in enumerate(z, start=1):
            w2 += (norm.cdf(zi) - (2 * i - 1) / (2 * n)) ** 2
        assert stat == pytest.approx(w2, rel=1e-12)
        assert 0 <= p <= 1

    def test_normal_draws_pass_mostly(self):
        rng = np.random.default_rng(29)
        passes = sum(
            cvm_normality(rng.normal(size=1000))[1] > 0.05 for _ in range(100)
        )
        assert passes >= 90

    def test_exponential_draws_fail(self):
        rng = np.random.default_rng(31)
        _, p = cvm_normality(rng.exponential(size=1000))
        assert p < 0.01

    def test_constant_sample_degenerate(self):
        with pytest.raises(NumericError, match="constant"):
            cvm_normality(np.ones(20))

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match="8"):
            cvm_normality([1.0, 2.0, 3.0])
