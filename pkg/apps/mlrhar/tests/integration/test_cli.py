"""End-to-end tests of the mlrhar command line."""

import json
import logging

import pandas as pd
import pytest

from apps.mlrhar import __version__
from apps.mlrhar.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from apps.mlrhar.core.estimators import REFERENCE_STEP_SIZE
from apps.mlrhar.io.panels import write_panel
from apps.mlrhar.tests.fixtures import (
    EXACT_P,
    exact_rank_panel,
    positive_panel,
    univariate_spec_block,
    write_config,
    write_offset_panel,
)

pytestmark = pytest.mark.integration


@pytest.fixture(autouse=True)
def isolated_run(monkeypatch):
    """No .env loading, text logs, and root handlers restored after each run."""
    monkeypatch.setenv("MLRHAR_ENV", "production")
    monkeypatch.setenv("MLRHAR_AUTO_LOAD_ENV", "0")
    monkeypatch.setenv("MLRHAR_LOG_FORMAT", "text")
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def read_manifest(out_dir):
    return json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))


def simulate_config(tmp_path, jump_intensity=0.0):
    return write_config(
        tmp_path / "sim.json",
        {
            "spec": univariate_spec_block(jump_intensity),
            "T": 5,
            "steps_per_day": 20,
            "m": [10, 20],
            "measures": ["RV", "BV"],
        },
    )


class TestSimulate:
    def test_writes_panels_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "sim"
        code = main(["simulate", "--config", str(simulate_config(tmp_path)), "--out", str(out)])

        assert code == EXIT_OK
        assert len(pd.read_csv(out / "high_freq.csv")) == 5 * 20 + 1
        assert len(pd.read_csv(out / "integrated_variance.csv")) == 5
        for name in ("rv_m10.csv", "bv_m10.csv", "rv_m20.csv", "bv_m20.csv"):
            assert len(pd.read_csv(out / name)) == 5, name
        manifest = read_manifest(out)
        assert manifest["version"] == __version__
        assert manifest["seed"] == 0
        assert manifest["total_jumps"] == 0
        assert len(manifest["config_hash"]) == 64
        assert "✓ Total jumps: 0" in capsys.readouterr().out

    def test_same_seed_same_files(self, tmp_path):
        config = str(simulate_config(tmp_path))
        checksums = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["simulate", "--config", config, "--seed", "9", "--out", str(out)]) == 0
            checksums.append(read_manifest(out)["files"])
        assert checksums[0] == checksums[1]

    def test_jumps_recorded(self, tmp_path):
        out = tmp_path / "sim"
        config = str(simulate_config(tmp_path, jump_intensity=5.0))
        assert main(["simulate", "--config", config, "--seed", "1", "--out", str(out)]) == 0
        assert read_manifest(out)["total_jumps"] > 0

    def test_negative_seed(self, tmp_path):
        config = str(simulate_config(tmp_path))
        code = main(["simulate", "--config", config, "--seed", "-1", "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE


class TestEstimate:
    def test_mlr_fit(self, tmp_path, capsys):
        data = write_offset_panel(exact_rank_panel(2000), tmp_path / "rv.csv")
        config = write_config(
            tmp_path / "est.json",
            {
                "input": str(data),
                "n_lags": EXACT_P,
                "ranks": [2, 2, 3],
                "covariance": True,
                "diagnostics": True,
            },
        )
        out = tmp_path / "fit"

        code = main(["estimate", "--config", str(config), "--method", "mlr", "--out", str(out)])

        assert code == EXIT_OK
        fit = json.loads((out / "fit.json").read_text(encoding="utf-8"))
        assert fit["converged"] is True
        assert fit["final_loss"] < 5.5
        assert fit["n_lags"] == EXACT_P
        assert (out / "coefficients.csv").read_text(encoding="utf-8").startswith("# N=5,P=4")
        assert pd.read_csv(out / "covariance.csv", header=None).shape == (100, 100)
        assert "kappa_U" in json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
        assert "mlr fit converged" in capsys.readouterr().out

    def test_unknown_method(self, tmp_path):
        config = write_config(tmp_path / "est.json", {"input": "rv.csv"})
        assert main(["estimate", "--config", str(config), "--method", "lasso"]) == EXIT_USAGE

    def test_singular_design(self, tmp_path, capsys):
        data = write_offset_panel(exact_rank_panel(50), tmp_path / "rv.csv")
        config = write_config(tmp_path / "est.json", {"input": str(data), "method": "ols"})

        code = main(["estimate", "--config", str(config), "--out", str(tmp_path / "fit")])

        assert code == EXIT_FAILURE
        assert "singular" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["estimate", "--config", str(tmp_path / "absent.json")]) == EXIT_USAGE


class TestForecast:
    def forecast_config(self, tmp_path, models, horizon=5):
        data = write_panel(positive_panel(60, 2), tmp_path / "rv.csv")
        return write_config(
            tmp_path / "fc.json",
            {"input": str(data), "window": 40, "horizon": horizon, "models": models},
        )

    def test_tables(self, tmp_path):
        models = [
            {"method": "ols", "n_lags": 1},
            {"method": "mlr", "n_lags": 2, "ranks": [1, 1, 1]},
        ]
        out = tmp_path / "fc"
        config = str(self.forecast_config(tmp_path, models))

        assert main(["forecast", "--config", config, "--out", str(out)]) == EXIT_OK
        assert len(pd.read_csv(out / "forecasts_ols.csv")) == 5 * 2
        assert (out / "forecasts_mlr-1x1x1.csv").exists()
        table = pd.read_csv(out / "qlike.csv")
        assert table["model"].tolist() == ["ols", "mlr-1x1x1"]

    def test_fixed_coefficients_from_estimate(self, tmp_path):
        data = write_panel(positive_panel(60, 2), tmp_path / "rv.csv")
        estimate = write_config(
            tmp_path / "est.json", {"input": str(data), "method": "ols", "n_lags": 1}
        )
        fit_dir = tmp_path / "fit"
        assert main(["estimate", "--config", str(estimate), "--out", str(fit_dir)]) == EXIT_OK

        config = write_config(
            tmp_path / "fc.json", {"input": str(data), "window": 40, "horizon": 5}
        )
        out = tmp_path / "fc"
        args = ["forecast", "--config", str(config), "--out", str(out)]
        code = main([*args, "--coefficients", str(fit_dir / "coefficients.csv")])

        assert code == EXIT_OK
        assert pd.read_csv(out / "qlike.csv")["model"].tolist() == ["fixed"]
        assert len(pd.read_csv(out / "forecasts_fixed.csv")) == 5 * 2

    def test_no_models(self, tmp_path):
        data = write_panel(positive_panel(60, 2), tmp_path / "rv.csv")
        config = write_config(
            tmp_path / "fc.json", {"input": str(data), "window": 40, "horizon": 5}
        )
        args = ["forecast", "--config", str(config), "--out", str(tmp_path / "o")]
        assert main(args) == EXIT_USAGE

    def test_zero_horizon(self, tmp_path):
        config = str(self.forecast_config(tmp_path, [{"method": "ols"}], horizon=0))
        assert main(["forecast", "--config", config, "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_duplicate_model_ids(self, tmp_path):
        models = [{"method": "ols", "n_lags": 1}, {"method": "ols", "n_lags": 2}]
        config = str(self.forecast_config(tmp_path, models))
        assert main(["forecast", "--config", config, "--out", str(tmp_path / "o")]) == EXIT_USAGE


class TestSelectRank:
    def test_recovers_ranks(self, tmp_path, capsys):
        data = write_offset_panel(exact_rank_panel(3000), tmp_path / "rv.csv")
        config = write_config(
            tmp_path / "bic.json",
            {
                "input": str(data),
                "n_lags": EXACT_P,
                "lambda": 1.0,
                "rank_grid": [[1, 1, 1], [2, 2, 3], [3, 3, 4]],
            },
        )
        out = tmp_path / "bic"

        assert main(["select-rank", "--config", str(config), "--out", str(out)]) == EXIT_OK
        assert "Selected ranks: (2, 2, 3)" in capsys.readouterr().out
        table = pd.read_csv(out / "bic.csv")
        assert table["selected"].sum() == 1
        assert json.loads((out / "selected.json").read_text(encoding="utf-8"))["ranks"] == [2, 2, 3]


class TestExperiment:
    def test_convergence_curves(self, tmp_path):
        config = write_config(
            tmp_path / "conv.json",
            {
                "process": {"n_assets": 3, "n_lags": 6},
                "n_days": 80,
                "intraday_counts": [5, 10],
                "steps_per_day": 10,
                "ranks": [2, 2, 3],
                "running_ranks": [[2, 2, 3], [3, 3, 4]],
                "iterations": 3,
            },
        )
        out = tmp_path / "conv"

        code = main(["experiment", "convergence", "--config", str(config), "--out", str(out)])

        assert code == EXIT_OK
        assert len(list(out.glob("curve_*.csv"))) == 4
        assert len(pd.read_csv(out / "summary.csv")) == 2 * 2 * 3
        assert read_manifest(out)["subcommand"] == "experiment convergence"

    def test_reps_override(self, tmp_path):
        config = write_config(
            tmp_path / "eb.json",
            {
                "dimensions": [3],
                "rank_settings": [[1, 1, 1]],
                "sample_sizes": [100, 150],
                "include_noise_process": False,
                "n_lags": 2,
                "replications": 50,
            },
        )
        out = tmp_path / "eb"
        args = ["experiment", "error-bound", "--config", str(config), "--reps", "2"]

        assert main([*args, "--threads", "2", "--out", str(out)]) == EXIT_OK
        manifest = read_manifest(out)
        assert manifest["replications"] == 2
        assert manifest["threads"] == 2
        assert set(pd.read_csv(out / "summary.csv")["replications"]) == {2}

    def test_reference_step_flag(self, tmp_path):
        config = write_config(
            tmp_path / "eb.json",
            {
                "dimensions": [3],
                "rank_settings": [[1, 1, 1]],
                "sample_sizes": [100, 150],
                "include_noise_process": False,
                "n_lags": 2,
                "replications": 2,
                "max_iterations": 5,
            },
        )
        out = tmp_path / "eb"
        args = ["experiment", "error-bound", "--config", str(config), "--out", str(out)]

        assert main([*args, "--reference-step"]) == EXIT_OK
        assert read_manifest(out)["step_size"] == REFERENCE_STEP_SIZE

    def test_unknown_experiment(self, tmp_path):
        config = write_config(tmp_path / "x.json", {})
        assert main(["experiment", "tuning", "--config", str(config)]) == EXIT_USAGE
