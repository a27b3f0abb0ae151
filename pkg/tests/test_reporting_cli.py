"""Config-driven runs, subsample reports, artifact files and the CLI."""

import json
import os
import time

import numpy as np
import pytest

import shiftrisk as sr
from shiftrisk.cli import main as cli_main
from conftest import lattice_frame


CONFIG_TEMPLATE = """\
dataset:
  path: {data}
  schema: {{w: categorical, z: categorical, loss: numeric}}
partition:
  mutable: [w]
  immutable: [z]
loss:
  kind: precomputed
  loss_column: loss
alpha_grid: {grid}
estimator:
  k_folds: 4
  seed: 77
  tuning: {{gammas: [1.0], ridge_lambdas: [1.0e-6], quantile_lambdas: [1.0e-8], inner_folds: 4}}
report:
  characterize: true
  outcome_column: loss
output_dir: {out}
"""


@pytest.fixture
def lattice_csv(tmp_path, lattice):
    path = tmp_path / "lattice.csv"
    sr.write_csv(sr.sample_discrete_instance(lattice, 600, seed=21), path)
    return str(path)


def write_config(tmp_path, data, out, grid="[0.0, 0.5]"):
    path = tmp_path / "analysis.yaml"
    path.write_text(CONFIG_TEMPLATE.format(data=data, grid=grid, out=out), encoding="utf-8")
    return str(path)


class TestCharacterize:
    def test_full_subsample_has_zero_distances(self, lattice):
        frame = lattice_frame(lattice, 400, seed=0)
        report = sr.characterize_subsample(frame, np.ones(frame.n_rows), "loss", alpha=0.0)
        assert report.subsample_size == frame.n_rows
        assert all(d == pytest.approx(0.0, abs=1e-12) for d in report.immutable_marginal_distance.values())

    def test_selecting_on_w_gives_unit_rate(self, lattice):
        frame = lattice_frame(lattice, 400, seed=1)
        h = frame.w_block[:, frame.w_names.index("w=1")].astype(int)
        report = sr.characterize_subsample(frame, h, "loss", alpha=0.5)
        inside, outside = report.mutable_rates["w=1"]
        assert inside == 1.0 and outside == 0.0

    def test_oracle_selection_rate_monotone_in_alpha(self):
        # high-mu cells sit at w=1, so the selected w=1 share must grow with alpha
        instance = sr.bundled_instance("two-strata")
        rates = []
        for alpha in (0.1, 0.3, 0.5, 0.7, 0.9):
            _, fractions = sr.exact_worst_case_discrete(instance, alpha, return_fractions=True)
            mass = instance.joint_pmf * fractions
            rates.append(mass[1].sum() / mass.sum())
        assert all(b >= a - 1e-12 for a, b in zip(rates, rates[1:]))

    def test_constant_correlation_flagged(self, lattice):
        frame = lattice_frame(lattice, 400, seed=2)
        h = frame.w_block[:, frame.w_names.index("w=2")].astype(int)
        report = sr.characterize_subsample(frame, h, "loss", alpha=0.5)
        # inside the subsample the w=2 indicator is constant 1
        assert report.within_subsample_correlations["w=2"] is None
        assert "w=2" in report.undefined_correlations

    def test_empty_subsample_raises(self, lattice):
        frame = lattice_frame(lattice, 100, seed=3)
        with pytest.raises(sr.EmptySubsample):
            sr.characterize_subsample(frame, np.zeros(100), "loss")


class TestCompareOnSubsamples:
    def test_identity_against_primary_loss(self, lattice, single_grid):
        frame = lattice_frame(lattice, 500, seed=4)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=4, tuning=single_grid)
        est = sr.estimate_worst_case(frame, config)
        value = sr.compare_on_subsamples(frame, est.h_indicators, "loss")
        assert value == pytest.approx(frame.losses[est.h_indicators == 1].mean())

    def test_zero_alternative(self, lattice):
        frame = lattice_frame(lattice, 100, seed=5)
        assert sr.compare_on_subsamples(frame, np.ones(100), np.zeros(100)) == 0.0

    def test_indicator_alternative_equals_mutable_rate(self, lattice):
        frame = lattice_frame(lattice, 300, seed=6)
        h = np.zeros(300)
        h[:120] = 1
        alt = frame.w_block[:, frame.w_names.index("w=1")]
        report = sr.characterize_subsample(frame, h, "loss", alpha=0.3)
        assert sr.compare_on_subsamples(frame, h, alt) == pytest.approx(report.mutable_rates["w=1"][0])


class TestRunAnalysis:
    def test_alpha_zero_grid_matches_mean(self, tmp_path, lattice_csv):
        out = str(tmp_path / "out0")
        config = sr.load_analysis_config(write_config(tmp_path, lattice_csv, out, grid="[0.0]"))
        curve = sr.run_analysis(config)
        ds = sr.load_dataset(lattice_csv, {"w": "categorical", "z": "categorical", "loss": "numeric"})
        assert curve.estimates[0].r_hat == np.mean(ds.column("loss"))
        results = json.loads((tmp_path / "out0" / "results.json").read_text())
        assert results["schema_version"] == 1
        assert results["curve"][0]["r_hat"] == np.mean(ds.column("loss"))
        assert results["config"]["estimator"]["seed"] == 77

    def test_artifacts_written(self, tmp_path, lattice_csv):
        out = tmp_path / "out1"
        config = sr.load_analysis_config(write_config(tmp_path, lattice_csv, str(out)))
        sr.run_analysis(config)
        for name in (
            "results.json",
            "curve.csv",
            "h_indicators.csv",
            "plot_risk_vs_alpha.csv",
            "plot_mutable_rate_vs_alpha.csv",
            "plot_correlation_vs_alpha.csv",
        ):
            assert (out / name).exists(), name
        curve_lines = (out / "curve.csv").read_text().strip().splitlines()
        assert curve_lines[0] == "alpha,r_hat,ci_lo,ci_hi,sigma2"
        assert len(curve_lines) == 3
        h_lines = (out / "h_indicators.csv").read_text().strip().splitlines()
        assert h_lines[0] == "row_id,alpha,h"
        assert len(h_lines) == 1 + 600 * 2

    def test_deterministic_across_runs_and_threads(self, tmp_path, lattice_csv):
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        cfg_a = sr.load_analysis_config(write_config(tmp_path, lattice_csv, out_a))
        sr.run_analysis(cfg_a, threads=1)
        cfg_b = sr.load_analysis_config(write_config(tmp_path, lattice_csv, out_b))
        sr.run_analysis(cfg_b, threads=3)
        for name in ("curve.csv", "h_indicators.csv", "plot_risk_vs_alpha.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        ja = json.loads((tmp_path / "a" / "results.json").read_text())
        jb = json.loads((tmp_path / "b" / "results.json").read_text())
        ja["config"]["output_dir"] = jb["config"]["output_dir"] = ""
        assert ja == jb

    def test_validation_fails_fast_without_reading_data(self, tmp_path):
        config_path = tmp_path / "bad.yaml"
        config_path.write_text(
            CONFIG_TEMPLATE.format(data="does-not-exist.csv", grid="[0.0, 0.5]", out="o")
            .replace("mutable: [w]", "mutable: [w, z]")
            .replace("immutable: [z]", "immutable: [z]"),
            encoding="utf-8",
        )
        config = sr.load_analysis_config(str(config_path))
        start = time.time()
        with pytest.raises(sr.ConfigError) as err:
            sr.run_analysis(config)
        assert time.time() - start < 1.0
        assert "z" in str(err.value)

    def test_unknown_config_key_rejected(self, tmp_path, lattice_csv):
        path = tmp_path / "weird.yaml"
        path.write_text(
            CONFIG_TEMPLATE.format(data=lattice_csv, grid="[0.0]", out="o") + "extra_section: 1\n",
            encoding="utf-8",
        )
        with pytest.raises(sr.ConfigError):
            sr.load_analysis_config(str(path))


class TestEmitPlotData:
    def test_single_point_curve(self, tmp_path, lattice, single_grid):
        frame = lattice_frame(lattice, 200, seed=7)
        curve = sr.risk_curve(frame, [0.5], sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=7, tuning=single_grid))
        paths = sr.emit_plot_data(curve, str(tmp_path))
        risk = (tmp_path / "plot_risk_vs_alpha.csv").read_text().strip().splitlines()
        assert risk[0] == "alpha,r_hat,ci_lo,ci_hi"
        assert len(risk) == 2
        assert len(paths) == 3

    def test_rows_sorted_by_alpha(self, tmp_path, lattice, single_grid):
        frame = lattice_frame(lattice, 400, seed=8)
        curve = sr.risk_curve(
            frame, [0.1, 0.5, 0.8], sr.EstimatorConfig(alpha=0.8, k_folds=5, seed=8, tuning=single_grid)
        )
        sr.emit_plot_data(curve, str(tmp_path))
        rows = (tmp_path / "plot_risk_vs_alpha.csv").read_text().strip().splitlines()[1:]
        alphas = [float(r.split(",")[0]) for r in rows]
        assert alphas == sorted(alphas)


class TestCli:
    def test_synth_writes_csv(self, tmp_path):
        out = str(tmp_path / "synth.csv")
        code = cli_main(["synth", "--instance", "two-point", "--n", "50", "--seed", "1", "--out", out])
        assert code == 0
        ds = sr.load_dataset(out, {"w": "categorical", "z": "categorical", "loss": "numeric"})
        assert ds.n_rows == 50

    def test_synth_toy_sine(self, tmp_path):
        out = str(tmp_path / "toy.csv")
        assert cli_main(["synth", "--instance", "toy-sine", "--n", "30", "--seed", "2", "--out", out]) == 0
        schema = {"x1": "numeric", "x2": "numeric", "y": "categorical", "prediction": "numeric", "loss": "numeric"}
        assert sr.load_dataset(out, schema).n_rows == 30

    def test_oracle_prints_exact_values(self, capsys):
        assert cli_main(["oracle", "--instance", "two-point", "--alpha", "0.5", "--epsilon", "0.1"]) == 0
        out = capsys.readouterr().out
        assert "primal=0.8" in out
        assert "dual=0.8" in out
        assert "0.85" in out

    def test_analyze_end_to_end_and_exit_codes(self, tmp_path, lattice_csv, capsys):
        config = write_config(tmp_path, lattice_csv, str(tmp_path / "cli-out"), grid="[0.0]")
        assert cli_main(["analyze", "--config", config]) == 0
        assert (tmp_path / "cli-out" / "results.json").exists()

    def test_overlapping_partition_exits_2_naming_columns(self, tmp_path, lattice_csv, capsys):
        path = tmp_path / "overlap.yaml"
        path.write_text(
            CONFIG_TEMPLATE.format(data=lattice_csv, grid="[0.0]", out="o").replace(
                "mutable: [w]", "mutable: [w, z]"
            ),
            encoding="utf-8",
        )
        code = cli_main(["analyze", "--config", str(path)])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error[config]:")
        assert "z" in err

    def test_missing_data_exits_3(self, tmp_path, capsys):
        config = write_config(tmp_path, str(tmp_path / "nope.csv"), str(tmp_path / "o"), grid="[0.0]")
        assert cli_main(["analyze", "--config", config]) == 3
        assert capsys.readouterr().err.startswith("error[data]:")

    def test_alpha_grid_override(self, tmp_path, lattice_csv):
        config = write_config(tmp_path, lattice_csv, str(tmp_path / "ov"), grid="[0.0, 0.5]")
        assert cli_main(["analyze", "--config", config, "--alpha-grid", "0.0"]) == 0
        lines = (tmp_path / "ov" / "curve.csv").read_text().strip().splitlines()
        assert len(lines) == 2  # header plus the single overridden grid point

    def test_seed_override_lands_in_config_echo(self, tmp_path, lattice_csv):
        config = write_config(tmp_path, lattice_csv, str(tmp_path / "sd"), grid="[0.0]")
        assert cli_main(["analyze", "--config", config, "--seed", "123"]) == 0
        results = json.loads((tmp_path / "sd" / "results.json").read_text())
        assert results["config"]["estimator"]["seed"] == 123

    def test_synth_to_stdout(self, capsys):
        assert cli_main(["synth", "--instance", "two-strata", "--n", "5", "--seed", "0"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "w,z,loss"
        assert len(lines) == 6
