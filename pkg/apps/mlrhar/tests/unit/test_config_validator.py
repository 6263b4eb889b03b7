"""Unit tests for run configuration validation."""

import json
import tempfile
import unittest
from pathlib import Path

from apps.mlrhar.core.config_validator import ConfigValidator, load_run_config
from apps.mlrhar.core.errors import ConfigError


def simulate_config(**overrides):
    config = {
        "spec": {"omega": [0.2], "alpha": [[[0.3]], [[0.1]]]},
        "T": 10,
        "steps_per_day": 20,
        "m": [10, 20],
    }
    config.update(overrides)
    return config


class TestConfigValidator(unittest.TestCase):
    """Schema checks per subcommand."""

    def test_valid_simulate_config(self):
        result = ConfigValidator.validate_config("simulate", simulate_config())

        self.assertTrue(result.is_valid)
        self.assertEqual(result.errors, [])
        self.assertEqual(result.unknown_keys, [])
        self.assertFalse(result.has_warnings)

    def test_missing_required_keys(self):
        config = simulate_config()
        del config["T"]

        result = ConfigValidator.validate_config("simulate", config)

        self.assertFalse(result.is_valid)
        self.assertIn("T: required", result.errors)

    def test_unknown_keys_are_errors(self):
        """Typos must not be silently ignored."""
        result = ConfigValidator.validate_config("simulate", simulate_config(steps=5))

        self.assertFalse(result.is_valid)
        self.assertEqual(result.unknown_keys, ["steps"])

    def test_nested_unknown_key(self):
        config = simulate_config()
        config["spec"]["omgea"] = 1.0

        result = ConfigValidator.validate_config("simulate", config)

        self.assertEqual(result.unknown_keys, ["spec.omgea"])

    def test_type_and_range_errors(self):
        cases = {
            "T": "ten",
            "steps_per_day": 0,
            "m": [0],
            "measures": ["RQ"],
        }
        for key, value in cases.items():
            with self.subTest(key=key):
                result = ConfigValidator.validate_config("simulate", simulate_config(**{key: value}))
                self.assertFalse(result.is_valid)
                self.assertTrue(any(e.startswith(key) for e in result.errors))

    def test_booleans_are_not_integers(self):
        result = ConfigValidator.validate_config("simulate", simulate_config(T=True))
        self.assertFalse(result.is_valid)

    def test_forecast_models(self):
        config = {
            "input": "rv.csv",
            "window": 100,
            "horizon": 5,
            "models": [{"method": "mlr", "ranks": [2, 2, 3]}, {"method": "lasso"}],
        }

        result = ConfigValidator.validate_config("forecast", config)

        self.assertFalse(result.is_valid)
        self.assertEqual(len(result.errors), 1)
        self.assertIn("models[1].method", result.errors[0])

    def test_rank_triples(self):
        config = {"input": "rv.csv", "rank_grid": [[1, 1, 1], [2, 2]]}

        result = ConfigValidator.validate_config("select-rank", config)

        self.assertFalse(result.is_valid)
        self.assertIn("rank_grid[1]", result.errors[0])

    def test_nullable_step_size(self):
        config = {"input": "rv.csv", "method": "mlr", "ranks": [1, 1, 1], "step_size": None}

        result = ConfigValidator.validate_config("estimate", config)

        self.assertTrue(result.is_valid)

    def test_estimate_without_ranks_warns(self):
        result = ConfigValidator.validate_config("estimate", {"input": "rv.csv"})

        self.assertTrue(result.is_valid)
        self.assertTrue(result.has_warnings)

    def test_experiment_process_block(self):
        config = {"process": {"n_assets": 1}, "replications": 2}

        result = ConfigValidator.validate_config("experiment asymptotics", config)

        self.assertFalse(result.is_valid)
        self.assertIn("process.n_assets", result.errors[0])

    def test_experiment_reference_step(self):
        for name in ("experiment asymptotics", "experiment error-bound", "experiment convergence"):
            result = ConfigValidator.validate_config(name, {"reference_step": True})
            self.assertTrue(result.is_valid, name)

        result = ConfigValidator.validate_config("experiment convergence", {"reference_step": 1})

        self.assertFalse(result.is_valid)

    def test_unknown_subcommand(self):
        result = ConfigValidator.validate_config("train", {})
        self.assertFalse(result.is_valid)

    def test_non_object_config(self):
        result = ConfigValidator.validate_config("simulate", [1, 2])
        self.assertFalse(result.is_valid)


class TestLoadRunConfig(unittest.TestCase):
    """Reading config files from disk."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_loads_valid_file(self):
        path = self.dir / "sim.json"
        path.write_text(json.dumps(simulate_config()), encoding="utf-8")

        self.assertEqual(load_run_config(path, "simulate")["T"], 10)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_run_config(self.dir / "absent.json", "simulate")

    def test_invalid_json_reports_position(self):
        path = self.dir / "bad.json"
        path.write_text('{"T": 10,\n"spec": }', encoding="utf-8")

        with self.assertRaises(ConfigError) as ctx:
            load_run_config(path, "simulate")

        self.assertIn("line 2", str(ctx.exception))

    def test_schema_violation(self):
        path = self.dir / "sim.json"
        path.write_text(json.dumps(simulate_config(extra=1)), encoding="utf-8")

        with self.assertRaises(ConfigError) as ctx:
            load_run_config(path, "simulate")

        self.assertIn("extra: unknown key", str(ctx.exception))
        self.assertEqual(ctx.exception.error_code, "CONFIG_INVALID")


if __name__ == "__main__":
    unittest.main()
