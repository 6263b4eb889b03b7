"""Test environment and file mapping for feature flags."""

import json
import os
from unittest.mock import patch

from apps.mlrhar.core.feature_flags import (
    FeatureFlag,
    FeatureFlagManager,
    get_feature_manager,
    is_feature_enabled,
    reset_feature_manager,
)


class TestEnvironmentVariableMapping:
    """MLRHAR_FEATURE_<NAME> overrides the built-in defaults."""

    @patch.dict(os.environ, {}, clear=True)
    def test_defaults(self):
        manager = FeatureFlagManager()
        assert manager.is_enabled(FeatureFlag.PARALLEL_REPLICATIONS) is True
        assert manager.is_enabled(FeatureFlag.RANK_CERTIFICATION) is False

    @patch.dict(os.environ, {}, clear=True)
    def test_case_insensitive_values(self):
        test_cases = [
            ("TRUE", True),
            ("true", True),
            ("1", True),
            ("yes", True),
            ("ON", True),
            ("false", False),
            ("0", False),
            ("no", False),
            ("off", False),
        ]

        for env_value, expected in test_cases:
            with patch.dict(os.environ, {"MLRHAR_FEATURE_RANK_CERTIFICATION": env_value}):
                manager = FeatureFlagManager()
                result = manager.is_enabled(FeatureFlag.RANK_CERTIFICATION)
                assert result is expected, f"Expected {expected} for env value '{env_value}'"

    @patch.dict(os.environ, {"MLRHAR_FEATURE_PARALLEL_REPLICATIONS": "maybe"}, clear=True)
    def test_invalid_value_keeps_default(self):
        manager = FeatureFlagManager()
        assert manager.is_enabled(FeatureFlag.PARALLEL_REPLICATIONS) is True

    def test_config_file(self, tmp_path):
        path = tmp_path / "flags.json"
        path.write_text(json.dumps({"rank_certification": True, "unknown": True}))
        with patch.dict(os.environ, {"MLRHAR_FEATURE_CONFIG_PATH": str(path)}, clear=True):
            manager = FeatureFlagManager()
            assert manager.is_enabled(FeatureFlag.RANK_CERTIFICATION) is True
            assert "unknown" not in manager.get_all_flags()

    def test_broken_config_file_is_ignored(self, tmp_path):
        path = tmp_path / "flags.json"
        path.write_text("{not json")
        with patch.dict(os.environ, {"MLRHAR_FEATURE_CONFIG_PATH": str(path)}, clear=True):
            manager = FeatureFlagManager()
            assert manager.is_enabled(FeatureFlag.RANK_CERTIFICATION) is False

    @patch.dict(os.environ, {}, clear=True)
    def test_memory_override(self):
        manager = FeatureFlagManager()
        manager.set_flag(FeatureFlag.PARALLEL_REPLICATIONS, False)
        assert manager.is_enabled(FeatureFlag.PARALLEL_REPLICATIONS) is False


class TestGlobalManager:
    def teardown_method(self):
        reset_feature_manager()

    def test_reset_reloads_environment(self):
        with patch.dict(os.environ, {"MLRHAR_FEATURE_RANK_CERTIFICATION": "1"}):
            reset_feature_manager()
            assert is_feature_enabled(FeatureFlag.RANK_CERTIFICATION) is True
        with patch.dict(os.environ, {"MLRHAR_FEATURE_RANK_CERTIFICATION": "0"}):
            assert is_feature_enabled(FeatureFlag.RANK_CERTIFICATION) is True
            reset_feature_manager()
            assert is_feature_enabled(FeatureFlag.RANK_CERTIFICATION) is False

    def test_singleton(self):
        assert get_feature_manager() is get_feature_manager()
