import json

import numpy as np
import pytest

from odflow import ODMatrix, SimConfig, read_matrix_csv, write_matrix_csv
from odflow.cli import main
from conftest import DEMO_TRUTH, make_fixture_network


@pytest.fixture
def demo_config(tmp_path, demo_truth):
    p = tmp_path / "sim.cfg"
    SimConfig(truth=demo_truth, days=10, seed=7).to_file(p)
    return p


class TestSimulate:
    def test_writes_dataset(self, tmp_path, demo_config):
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(demo_config), "--out", str(out)]) == 0
        counts = sorted(out.glob("counts_*.csv"))
        assert len(counts) == 10
        assert (out / "barriers.csv").exists()
        assert (out / "survey.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "simulate"
        assert "barriers.csv" in manifest["outputs"]

    def test_rerun_bit_identical(self, tmp_path, demo_config):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        main(["simulate", "--config", str(demo_config), "--out", str(out1)])
        main(["simulate", "--config", str(demo_config), "--out", str(out2)])
        for name in ["barriers.csv", "survey.csv", "counts_0001.csv"]:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_invalid_noise_level_exit_2(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        rows = ";".join(",".join(f"{v:g}" for v in row) for row in DEMO_TRUTH)
        p.write_text(f"truth_inline = {rows}\nnoise_level = 2.0\n")
        code = main(["simulate", "--config", str(p), "--out", str(tmp_path / "x")])
        assert code == 2
        assert "noise_level" in capsys.readouterr().err

    def test_refuses_nonempty_out_without_force(self, tmp_path, demo_config):
        out = tmp_path / "busy"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert main(["simulate", "--config", str(demo_config), "--out", str(out)]) == 1
        assert main([
            "simulate", "--config", str(demo_config), "--out", str(out), "--force",
        ]) == 0


def _simulated_dataset(tmp_path, demo_config):
    out = tmp_path / "data"
    assert main(["simulate", "--config", str(demo_config), "--out", str(out)]) == 0
    return out


class TestEstimate:
    def test_gaussian_noiseless_feasible(self, tmp_path, demo_truth):
        # noiseless inputs: survey = truth itself, margins = exact truth margins
        survey = tmp_path / "survey.csv"
        write_matrix_csv(survey, demo_truth)
        barriers = tmp_path / "barriers.csv"
        dep = DEMO_TRUTH.sum(axis=1)
        with barriers.open("w") as fh:
            fh.write("date,station_id,departures,arrivals\n")
            for i, sid in enumerate(demo_truth.station_ids):
                fh.write(f"2020-01-01,{sid},{dep[i]:g},{dep[i]:g}\n")
        out = tmp_path / "est"
        code = main([
            "estimate", "--survey", str(survey), "--counts", str(barriers),
            "--method", "gaussian", "--out", str(out),
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["constraint_violation"] < 1e-8
        est = read_matrix_csv(out / "matrix.csv")
        assert np.allclose(est.entries, DEMO_TRUTH, atol=1e-6)
        assert (out / "heatmap.svg").exists()
        assert (out / "margins.csv").exists()

    def test_missing_survey_exit_1(self, tmp_path):
        code = main([
            "estimate", "--survey", str(tmp_path / "nope.csv"),
            "--counts", str(tmp_path / "nope2.csv"),
            "--method", "gaussian", "--out", str(tmp_path / "o"),
        ])
        assert code == 1

    def test_adhoc_beats_mle_on_biased_survey(self, tmp_path, demo_truth):
        from odflow import bias_survey_absolute, sample_counts

        rng_survey = bias_survey_absolute(demo_truth, 1.0, 0.5, seed=99)
        survey = tmp_path / "survey.csv"
        write_matrix_csv(survey, rng_survey)
        truth_csv = tmp_path / "truth.csv"
        write_matrix_csv(truth_csv, demo_truth)
        _, obs = sample_counts(demo_truth, 200, 101)
        barriers = tmp_path / "barriers.csv"
        from datetime import date, timedelta

        with barriers.open("w") as fh:
            fh.write("date,station_id,departures,arrivals\n")
            for t in range(obs.days):
                d = (date(2020, 1, 1) + timedelta(days=t)).isoformat()
                for i, sid in enumerate(demo_truth.station_ids):
                    fh.write(f"{d},{sid},{obs.y_dep[t, i]:g},{obs.y_arr[t, i]:g}\n")
        scores = {}
        for method in ("adhoc", "mle"):
            out = tmp_path / f"est_{method}"
            code = main([
                "estimate", "--survey", str(survey), "--counts", str(barriers),
                "--method", method, "--truth", str(truth_csv), "--out", str(out),
            ])
            assert code == 0
            scores[method] = json.loads((out / "report.json").read_text())[
                "matrix_mse_vs_truth"
            ]
        assert scores["adhoc"] < scores["mle"]

    def test_regression_method_emits_effects(self, tmp_path, demo_config):
        data = _simulated_dataset(tmp_path, demo_config)
        design = tmp_path / "design.csv"
        with design.open("w") as fh:
            fh.write("intercept,rain\n")
            for t in range(10):
                fh.write(f"1,{t % 2}\n")
        out = tmp_path / "reg"
        code = main([
            "estimate", "--survey", str(data / "survey.csv"),
            "--counts", str(data / "barriers.csv"),
            "--method", "regression", "--design", str(design), "--out", str(out),
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert isinstance(report, list) and len(report) == 2
        assert (out / "effect_rain.csv").exists()


class TestRobustnessCmd:
    def test_small_grid_csv_shape(self, tmp_path, demo_truth):
        cfg = tmp_path / "rob.cfg"
        rows = ";".join(",".join(f"{v:g}" for v in row) for row in DEMO_TRUTH)
        cfg.write_text(
            f"truth_inline = {rows}\nseed = 3\n"
            "etas = 0.0,0.5\nTs = 20,60\nmethods = gaussian,adhoc\n"
            "replications = 4\n"
        )
        out = tmp_path / "rob"
        assert main(["robustness", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "robustness.csv").read_text().strip().splitlines()
        # methods x kinds x etas x Ts = 2*2*2*2
        assert len(lines) == 1 + 16
        assert (out / "curves_absolute.svg").exists()
        assert (out / "curves_proportional.svg").exists()


class TestNormalityCmd:
    def test_table_shape(self, tmp_path, demo_truth):
        cfg = tmp_path / "norm.cfg"
        rows = ";".join(",".join(f"{v:g}" for v in row) for row in DEMO_TRUTH)
        cfg.write_text(
            f"truth_inline = {rows}\nseed = 5\nTs = 10,30\nreplications = 60\n"
        )
        out = tmp_path / "norm"
        assert main(["normality", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "normality.csv").read_text().strip().splitlines()
        assert lines[0] == "component,T,statistic,p_value"
        assert len(lines) == 1 + 5 * 2  # five eigenvalues x two T values


class TestApply:
    def test_six_wharf_end_to_end(self, tmp_path):
        stations, journeys, barriers, _ = make_fixture_network(tmp_path)
        out = tmp_path / "apply"
        code = main([
            "apply", "--stations", str(stations), "--journeys", str(journeys),
            "--barriers", str(barriers), "--method", "gaussian", "--out", str(out),
        ])
        assert code == 0
        est = read_matrix_csv(out / "matrix.csv")
        assert est.n == 6
        report = json.loads((out / "report.json").read_text())
        assert "dropped_same_station" in report
        assert (out / "survey_od.csv").exists()
        assert (out / "heatmap_survey.svg").exists()

    def test_all_same_wharf_journeys_impossible(self, tmp_path):
        stations, _, barriers, _ = make_fixture_network(tmp_path)
        journeys = tmp_path / "same.csv"
        with journeys.open("w") as fh:
            fh.write("id,origin_station,destination_station,date,ticket_class\n")
            for k in range(5):
                fh.write(f"p{k},W1,W1,2010-03-01,regular_zone\n")
        code = main([
            "apply", "--stations", str(stations), "--journeys", str(journeys),
            "--barriers", str(barriers), "--method", "gaussian",
            "--out", str(tmp_path / "out"),
        ])
        assert code == 3

    def test_rerun_identical_outputs(self, tmp_path):
        stations, journeys, barriers, _ = make_fixture_network(tmp_path)
        outs = []
        for name in ("a1", "a2"):
            out = tmp_path / name
            assert main([
                "apply", "--stations", str(stations), "--journeys", str(journeys),
                "--barriers", str(barriers), "--method", "mle", "--out", str(out),
            ]) == 0
            outs.append(out)
        assert (outs[0] / "matrix.csv").read_bytes() == (outs[1] / "matrix.csv").read_bytes()
        m1 = json.loads((outs[0] / "manifest.json").read_text())
        m2 = json.loads((outs[1] / "manifest.json").read_text())
        assert m1["input_digests"] == m2["input_digests"]
