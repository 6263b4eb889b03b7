"""Strict validation of JSON run configurations."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

logger = logging.getLogger(__name__)

METHODS = ("ols", "mri", "mlr", "vhar", "vhari")
MEASURES = ("RV", "BV")
REFIT_POLICIES = ("refit", "fixed")


@dataclass(frozen=True)
class Rule:
    """
    Expected shape of one config value.

    kind is one of: int, float, bool, str, str_list, matrix, vector_or_scalar,
    tensor, int_list, ranks, rank_list, model_list, object.
    """

    kind: str
    minimum: float | None = None
    maximum: float | None = None
    choices: tuple[str, ...] | None = None
    nullable: bool = False
    required: bool = False
    schema: dict[str, "Rule"] | None = None


@dataclass
class ValidationResult:
    """Result of configuration validation."""

    is_valid: bool
    errors: list[str]
    unknown_keys: list[str]
    warnings: list[str] = field(default_factory=list)

    @property
    def has_warnings(self) -> bool:
        return len(self.warnings) > 0


SPEC_SCHEMA: dict[str, Rule] = {
    "omega": Rule("vector_or_scalar", required=True),
    "alpha": Rule("tensor", required=True),
    "beta": Rule("vector_or_scalar"),
    "v": Rule("vector_or_scalar"),
    "rho_b": Rule("matrix"),
    "rho_w": Rule("matrix"),
    "rho": Rule("matrix"),
    "jump_intensity": Rule("vector_or_scalar"),
    "jump_mean": Rule("float"),
    "jump_variance": Rule("float", minimum=0),
    "drift": Rule("vector_or_scalar"),
}

_PANEL_INPUT: dict[str, Rule] = {
    "input": Rule("str", required=True),
    "wide": Rule("bool"),
    "measure": Rule("str", choices=MEASURES),
    "log_transform": Rule("bool"),
    "n_lags": Rule("int", minimum=1),
}

_PGD: dict[str, Rule] = {
    "step_size": Rule("float", minimum=0, nullable=True),
    "max_iterations": Rule("int", minimum=1),
    "tolerance": Rule("float", minimum=0),
}

MODEL_SCHEMA: dict[str, Rule] = {
    "method": Rule("str", choices=METHODS, required=True),
    "n_lags": Rule("int", minimum=1),
    "ranks": Rule("ranks"),
    "running_ranks": Rule("ranks"),
    "r2": Rule("int", minimum=1),
    "refit": Rule("str", choices=REFIT_POLICIES),
    "name": Rule("str"),
    **_PGD,
}

PROCESS_SCHEMA: dict[str, Rule] = {
    "n_assets": Rule("int", minimum=2),
    "n_lags": Rule("int", minimum=6),
    "omega": Rule("float", minimum=0),
    "v": Rule("float", minimum=0),
    "leverage": Rule("float", minimum=-1, maximum=1),
    "target_radius": Rule("float", minimum=0, maximum=1),
    "spec_seed": Rule("int", minimum=0),
}

SCHEMAS: dict[str, dict[str, Rule]] = {
    "simulate": {
        "spec": Rule("object", required=True, schema=SPEC_SCHEMA),
        "T": Rule("int", required=True, minimum=1),
        "steps_per_day": Rule("int", required=True, minimum=1),
        "m": Rule("int_list"),
        "measures": Rule("str_list", choices=MEASURES),
        "sigma0": Rule("float", minimum=0),
        "x0": Rule("float"),
        "burn_in": Rule("int", minimum=0),
    },
    "estimate": {
        **_PANEL_INPUT,
        "method": Rule("str", choices=METHODS),
        "ranks": Rule("ranks"),
        "running_ranks": Rule("ranks"),
        "r2": Rule("int", minimum=1),
        "covariance": Rule("bool"),
        "diagnostics": Rule("bool"),
        **_PGD,
    },
    "forecast": {
        **_PANEL_INPUT,
        "window": Rule("int", required=True, minimum=2),
        "horizon": Rule("int", required=True, minimum=1),
        "models": Rule("model_list", schema=MODEL_SCHEMA),
        "coefficients": Rule("str"),
    },
    "select-rank": {
        **_PANEL_INPUT,
        "lambda": Rule("float", minimum=0),
        "rank_max": Rule("int", minimum=1),
        "rank_grid": Rule("rank_list"),
        **_PGD,
    },
    "experiment asymptotics": {
        "process": Rule("object", schema=PROCESS_SCHEMA),
        "sample_sizes": Rule("int_list"),
        "intraday_counts": Rule("int_list"),
        "steps_per_day": Rule("int", minimum=1),
        "replications": Rule("int", minimum=2),
        "ranks": Rule("ranks"),
        "threads": Rule("int", minimum=1),
        "reference_step": Rule("bool"),
        **_PGD,
    },
    "experiment error-bound": {
        "dimensions": Rule("int_list"),
        "rank_settings": Rule("rank_list"),
        "sample_sizes": Rule("int_list"),
        "noise_sample_sizes": Rule("int_list"),
        "include_noise_process": Rule("bool"),
        "n_lags": Rule("int", minimum=1),
        "core_norm": Rule("float", minimum=0),
        "replications": Rule("int", minimum=2),
        "threads": Rule("int", minimum=1),
        "reference_step": Rule("bool"),
        "spec_seed": Rule("int", minimum=0),
        **_PGD,
    },
    "experiment convergence": {
        "process": Rule("object", schema=PROCESS_SCHEMA),
        "n_days": Rule("int", minimum=1),
        "intraday_counts": Rule("int_list"),
        "steps_per_day": Rule("int", minimum=1),
        "ranks": Rule("ranks"),
        "running_ranks": Rule("rank_list"),
        "iterations": Rule("int", minimum=1),
        "step_size": Rule("float", minimum=0, nullable=True),
        "replications": Rule("int", minimum=1),
        "threads": Rule("int", minimum=1),
        "reference_step": Rule("bool"),
    },
}


def _is_number(value: Any) -> bool:
    return isinstance(value, int | float) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_matrix(value: Any) -> bool:
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        return False
    width = len(value[0])
    return width > 0 and all(len(r) == width and all(_is_number(x) for x in r) for r in value)


class ConfigValidator:
    """Validates run configurations before any computation starts."""

    @classmethod
    def validate_config(cls, subcommand: str, data: Any) -> ValidationResult:
        """
        Check a parsed JSON config against the subcommand schema.

        Args:
            subcommand: 'simulate', 'estimate', 'forecast', 'select-rank' or
                'experiment <name>'
            data: Parsed JSON

        Returns:
            ValidationResult; unknown keys count as errors
        """
        if subcommand not in SCHEMAS:
            return ValidationResult(False, [f"unknown subcommand '{subcommand}'"], [])
        if not isinstance(data, dict):
            return ValidationResult(False, ["config must be a JSON object"], [])
        errors: list[str] = []
        unknown: list[str] = []
        warnings: list[str] = []
        cls._check_object(SCHEMAS[subcommand], data, "", errors, unknown)
        warnings.extend(cls._cross_checks(subcommand, data))
        return ValidationResult(
            is_valid=not errors and not unknown,
            errors=errors,
            unknown_keys=unknown,
            warnings=warnings,
        )

    @classmethod
    def _check_object(
        cls,
        schema: dict[str, Rule],
        data: dict[str, Any],
        prefix: str,
        errors: list[str],
        unknown: list[str],
    ) -> None:
        for key in data:
            if key not in schema:
                unknown.append(prefix + key)
        for key, rule in schema.items():
            if key not in data:
                if rule.required:
                    errors.append(f"{prefix}{key}: required")
                continue
            cls._check_value(rule, data[key], prefix + key, errors, unknown)

    @classmethod
    def _check_value(
        cls, rule: Rule, value: Any, name: str, errors: list[str], unknown: list[str]
    ) -> None:
        if value is None:
            if not rule.nullable:
                errors.append(f"{name}: must not be null")
            return
        kind = rule.kind
        if kind == "int":
            if not _is_int(value):
                errors.append(f"{name}: expected an integer, got {value!r}")
                return
            cls._check_range(rule, value, name, errors)
        elif kind == "float":
            if not _is_number(value):
                errors.append(f"{name}: expected a number, got {value!r}")
                return
            cls._check_range(rule, value, name, errors)
        elif kind == "bool":
            if not isinstance(value, bool):
                errors.append(f"{name}: expected true or false, got {value!r}")
        elif kind == "str":
            if not isinstance(value, str):
                errors.append(f"{name}: expected a string, got {value!r}")
            elif rule.choices and value not in rule.choices:
                errors.append(f"{name}: '{value}' is not one of {', '.join(rule.choices)}")
        elif kind == "str_list":
            if not isinstance(value, list) or not value:
                errors.append(f"{name}: expected a non-empty list of strings")
            elif rule.choices and any(v not in rule.choices for v in value):
                errors.append(f"{name}: entries must be among {', '.join(rule.choices)}")
        elif kind == "int_list":
            positive = isinstance(value, list) and all(_is_int(v) and v >= 1 for v in value)
            if not (positive and value):
                errors.append(f"{name}: expected a non-empty list of positive integers")
        elif kind == "ranks":
            triple = isinstance(value, list) and len(value) == 3
            if not (triple and all(_is_int(v) and v >= 1 for v in value)):
                errors.append(f"{name}: expected three positive integers")
        elif kind == "rank_list":
            if not isinstance(value, list) or not value:
                errors.append(f"{name}: expected a non-empty list of rank triples")
            else:
                for i, item in enumerate(value):
                    cls._check_value(Rule("ranks"), item, f"{name}[{i}]", errors, unknown)
        elif kind == "vector_or_scalar":
            listed = isinstance(value, list) and value and all(_is_number(v) for v in value)
            if not (_is_number(value) or listed):
                errors.append(f"{name}: expected a number or a list of numbers")
        elif kind == "matrix":
            if not _is_matrix(value):
                errors.append(f"{name}: expected a rectangular list of numeric rows")
        elif kind == "tensor":
            if not isinstance(value, list) or not value or not all(_is_matrix(v) for v in value):
                errors.append(f"{name}: expected a list of lag matrices")
        elif kind == "object":
            if not isinstance(value, dict):
                errors.append(f"{name}: expected an object")
            else:
                cls._check_object(rule.schema or {}, value, f"{name}.", errors, unknown)
        elif kind == "model_list":
            if not isinstance(value, list) or not value:
                errors.append(f"{name}: expected a non-empty list of model objects")
                return
            for i, item in enumerate(value):
                if not isinstance(item, dict):
                    errors.append(f"{name}[{i}]: expected an object")
                else:
                    cls._check_object(rule.schema or {}, item, f"{name}[{i}].", errors, unknown)

    @staticmethod
    def _check_range(rule: Rule, value: float, name: str, errors: list[str]) -> None:
        if rule.minimum is not None and value < rule.minimum:
            errors.append(f"{name}: {value} is below the minimum {rule.minimum}")
        if rule.maximum is not None and value > rule.maximum:
            errors.append(f"{name}: {value} is above the maximum {rule.maximum}")

    @classmethod
    def _cross_checks(cls, subcommand: str, data: dict[str, Any]) -> list[str]:
        warnings = []
        method = data.get("method")
        if subcommand == "estimate" and method in ("mlr", None) and "ranks" not in data:
            warnings.append("ranks not set; MLR will use full ranks (N, N, P)")
        if subcommand == "simulate" and "m" not in data:
            warnings.append("m not set; realized measures use steps_per_day")
        return warnings


def load_run_config(path: Path, subcommand: str) -> dict[str, Any]:
    """
    Read and validate a JSON run config.

    Raises:
        ConfigError: Unreadable file, invalid JSON or schema violations
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: line {e.lineno}, column {e.colno}: {e.msg}")

    result = ConfigValidator.validate_config(subcommand, data)
    for warning in result.warnings:
        logger.warning(f"config {path}: {warning}")
    if not result.is_valid:
        problems = result.errors + [f"{k}: unknown key" for k in result.unknown_keys]
        raise ConfigError(
            f"invalid {subcommand} config {path}: " + "; ".join(problems),
            hint="Check key names and value types against the documented schema",
        )
    return data  # type: ignore[no-any-return]
