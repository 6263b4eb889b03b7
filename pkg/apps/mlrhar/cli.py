"""Command line entry point for mlrhar."""

import argparse
import dataclasses
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .core.config_validator import METHODS, load_run_config
from .core.diffusion_sim import (
    DEFAULT_SIGMA0,
    DEFAULT_X0,
    DiffusionSpec,
    JumpSizeLaw,
    MeasureKind,
    RealizedPanel,
    bipower_variation,
    center_and_transform,
    realized_volatility,
    simulate,
)
from .core.env_bootstrap import bootstrap_env
from .core.errors import ConfigError, MlrHarError, NonStationaryError, format_console_error
from .core.estimators import (
    DEFAULT_BIC_LAMBDA,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_RANK_MAX,
    DEFAULT_TOLERANCE,
    REFERENCE_STEP_SIZE,
    Method,
    PgdConfig,
    asymptotic_covariance_from_moments,
    best_bic,
    bic_scores,
    build_design,
    default_rank_grid,
    dependence_diagnostics,
    fit_by_method,
    sample_moments,
)
from .core.evaluation import ModelConfig, RefitPolicy, rolling_forecast, score_run
from .core.experiments import (
    ASYMPTOTICS,
    CONVERGENCE,
    ERROR_BOUND,
    EXPERIMENTS,
    AsymptoticsConfig,
    ConvergenceConfig,
    ErrorBoundConfig,
    ExperimentReport,
    HarItoDesign,
    experiment_asymptotics,
    experiment_convergence,
    experiment_error_bound,
    experiment_step_size,
)
from .core.har_model import HAR_MONTH, InnovationSpec, VarCoefficients
from .core.settings import LOG_LEVELS, Settings, get_settings
from .core.tensor_core import hosvd
from .io.panels import (
    read_coefficients,
    read_panel,
    write_coefficients,
    write_fit_sidecar,
    write_high_freq,
    write_json,
    write_manifest,
    write_panel,
)
from .platform.logging import (
    get_logger,
    get_run_id,
    new_run_id,
    set_run_id,
    setup_structured_logging,
)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

EPILOG = """
Examples:
  %(prog)s simulate --config sim.json --seed 7 --out runs/sim
  %(prog)s estimate --config est.json --method mlr --out runs/fit
  %(prog)s forecast --config fc.json --out runs/fc
  %(prog)s select-rank --config bic.json --threads 8 --out runs/bic
  %(prog)s experiment convergence --config conv.json --reps 1 --out runs/conv

Environment Variables:
  LOG_LEVEL                            # DEBUG, INFO, WARNING or ERROR
  MLRHAR_LOG_FORMAT                    # json or text
  MLRHAR_THREADS                       # default worker threads
  MLRHAR_FEATURE_<FLAG_NAME>=true/false
"""


@dataclasses.dataclass(frozen=True)
class RunContext:
    """Everything a subcommand needs besides its config."""

    seed: int
    out_dir: Path
    threads: int
    reps: int | None
    settings: Settings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlrhar",
        description="Simulate, estimate and evaluate low Tucker rank HAR-Ito models",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="JSON run config")
    common.add_argument("--seed", type=int, default=0, help="Master seed (default 0)")
    common.add_argument("--out", type=Path, default=Path("out"), help="Output directory")
    common.add_argument("--reps", type=int, help="Replication count override")
    common.add_argument("--threads", type=int, help="Worker threads (default MLRHAR_THREADS)")
    common.add_argument(
        "--log-level", choices=[level.lower() for level in LOG_LEVELS], help="Log level"
    )

    subparsers = parser.add_subparsers(dest="command", required=True, help="Commands")
    subparsers.add_parser("simulate", parents=[common], help="Simulate HAR-Ito prices and RV/BV")

    estimate_parser = subparsers.add_parser(
        "estimate", parents=[common], help="Fit coefficients to a panel"
    )
    estimate_parser.add_argument("--method", choices=METHODS, help="Overrides the config method")

    forecast_parser = subparsers.add_parser(
        "forecast", parents=[common], help="Rolling one-step-ahead forecasts"
    )
    forecast_parser.add_argument(
        "--coefficients", type=Path, help="Also forecast with a coefficients.csv from estimate"
    )
    subparsers.add_parser("select-rank", parents=[common], help="BIC rank selection")

    experiment_parser = subparsers.add_parser(
        "experiment", parents=[common], help="Run a Monte Carlo experiment"
    )
    experiment_parser.add_argument("name", choices=EXPERIMENTS, help="Experiment to run")
    experiment_parser.add_argument(
        "--reference-step",
        action="store_true",
        help=f"Run PGD with the fixed step {REFERENCE_STEP_SIZE:g}",
    )
    return parser


def _positive(value: int | None, name: str) -> int | None:
    if value is not None and value < 1:
        raise ConfigError(f"--{name} must be at least 1, got {value}")
    return value


def spec_from_config(block: dict[str, Any]) -> DiffusionSpec:
    """DiffusionSpec from the 'spec' block; alpha is the list of lag matrices."""
    alpha = np.stack([np.asarray(a, dtype=float) for a in block["alpha"]], axis=2)
    optional = ("beta", "v", "rho_b", "rho_w", "rho", "jump_intensity", "drift")
    arrays = {k: np.asarray(block[k], dtype=float) for k in optional if k in block}
    law = JumpSizeLaw(
        mean=float(block.get("jump_mean", 0.0)),
        variance=float(block.get("jump_variance", JumpSizeLaw().variance)),
    )
    return DiffusionSpec(
        omega=np.asarray(block["omega"], dtype=float),
        alpha=alpha,
        jump_size_law=law,
        **arrays,
    )


def _read_input(config: dict[str, Any]) -> RealizedPanel:
    return read_panel(
        Path(config["input"]),
        measure_kind=config.get("measure", MeasureKind.RV.value),
        wide=bool(config.get("wide", False)),
    )


def _ranks(value: Sequence[int] | None) -> tuple[int, int, int] | None:
    return None if value is None else (int(value[0]), int(value[1]), int(value[2]))


def _pgd(config: dict[str, Any], ranks: tuple[int, int, int]) -> PgdConfig:
    return PgdConfig(
        ranks=ranks,
        running_ranks=_ranks(config.get("running_ranks")),
        step_size=config.get("step_size"),
        max_iterations=int(config.get("max_iterations", DEFAULT_MAX_ITERATIONS)),
        tolerance=float(config.get("tolerance", DEFAULT_TOLERANCE)),
    )


def _finish(
    ctx: RunContext,
    subcommand: str,
    config: dict[str, Any],
    files: list[Path],
    extra: dict[str, Any] | None = None,
) -> Path:
    manifest = write_manifest(
        ctx.out_dir,
        subcommand,
        config,
        ctx.seed,
        files,
        run_id=get_run_id(),
        extra={"threads": ctx.threads, "reps_override": ctx.reps, **(extra or {})},
    )
    logger.info(
        f"{subcommand}: wrote {len(files)} files to {ctx.out_dir}",
        action="run_complete",
        extra_fields={"files": [f.name for f in files]},
    )
    return manifest


def cmd_simulate(config: dict[str, Any], ctx: RunContext) -> list[Path]:
    """High-frequency log prices, daily integrated variance and RV/BV panels."""
    spec = spec_from_config(config["spec"])
    steps = int(config["steps_per_day"])
    panel = simulate(
        spec,
        int(config["T"]),
        steps,
        ctx.seed,
        sigma0=float(config.get("sigma0", DEFAULT_SIGMA0)),
        x0=float(config.get("x0", DEFAULT_X0)),
        burn_in=config.get("burn_in"),
    )
    files = [write_high_freq(panel, ctx.out_dir / "high_freq.csv")]
    if panel.integrated_variance is not None:
        truth = RealizedPanel(panel.integrated_variance, MeasureKind.SYNTHETIC)
        files.append(write_panel(truth, ctx.out_dir / "integrated_variance.csv"))

    for m in config.get("m", [steps]):
        for measure in config.get("measures", [MeasureKind.RV.value]):
            if MeasureKind(measure) is MeasureKind.BV:
                daily = bipower_variation(panel, int(m))
            else:
                daily = realized_volatility(panel, int(m))
            files.append(write_panel(daily, ctx.out_dir / f"{measure.lower()}_m{m}.csv"))

    _finish(ctx, "simulate", config, files, {"total_jumps": panel.total_jumps})
    print(f"✓ Simulated {panel.n_days} days x {panel.n_assets} assets")
    print(f"✓ Total jumps: {panel.total_jumps}")
    return files


def cmd_estimate(config: dict[str, Any], ctx: RunContext, method: str | None = None) -> list[Path]:
    """Fit one estimator; optional plug-in asymptotic covariance and diagnostics."""
    chosen = Method(method or config.get("method", Method.MLR.value))
    centered = center_and_transform(_read_input(config), bool(config.get("log_transform", False)))
    n_lags = int(config.get("n_lags", HAR_MONTH))
    design = build_design(centered, n_lags)
    ranks = _ranks(config.get("ranks")) or design.dims
    pgd = _pgd(config, ranks) if chosen is Method.MLR else None
    fit = fit_by_method(design, chosen, ranks=ranks, r2=config.get("r2"), pgd=pgd)

    files = [write_coefficients(fit.tensor, ctx.out_dir / "coefficients.csv", chosen.value)]
    sidecar_extra = {
        "n_lags": n_lags,
        "measure_kind": centered.measure_kind.value,
        "centering": centered.centering,
        "n_obs": design.n_obs,
    }
    files.append(write_fit_sidecar(fit, ctx.out_dir / "fit.json", sidecar_extra))

    if config.get("covariance") or config.get("diagnostics"):
        gamma_hat, sigma_hat = sample_moments(design)
        if config.get("covariance"):
            if chosen in (Method.OLS, Method.MRI, Method.MLR):
                cov = asymptotic_covariance_from_moments(
                    gamma_hat,
                    sigma_hat,
                    chosen,
                    tensor=fit.tensor,
                    tucker=hosvd(fit.tensor, ranks) if chosen is Method.MLR else None,
                    r2=config.get("r2", ranks[1]),
                )
                path = ctx.out_dir / "covariance.csv"
                pd.DataFrame(cov).to_csv(path, index=False, header=False, float_format="%.17g")
                files.append(path)
            else:
                logger.warning(f"no asymptotic covariance for {chosen.value}, skipped")
        if config.get("diagnostics"):
            try:
                report = dependence_diagnostics(
                    VarCoefficients(fit.tensor), InnovationSpec(sigma_hat), ranks
                )
                files.append(write_json(report.to_dict(), ctx.out_dir / "diagnostics.json"))
            except NonStationaryError as e:
                logger.warning(f"diagnostics skipped: {e}")

    _finish(ctx, "estimate", config, files, {"method": chosen.value})
    status = "converged" if fit.converged else "did not converge"
    print(f"✓ {chosen.value} fit {status}, final loss {fit.final_loss:.6g}")
    return files


def model_from_config(block: dict[str, Any], config: dict[str, Any]) -> ModelConfig:
    method = Method(block["method"])
    ranks = _ranks(block.get("ranks"))
    pgd = _pgd(block, ranks) if method is Method.MLR and ranks else None
    return ModelConfig(
        method=method,
        n_lags=int(block.get("n_lags", config.get("n_lags", HAR_MONTH))),
        ranks=ranks,
        r2=block.get("r2"),
        pgd=pgd,
        log_transform=bool(config.get("log_transform", False)),
        refit=RefitPolicy(block.get("refit", RefitPolicy.REFIT_EACH_STEP.value)),
        name=block.get("name"),
    )


def cmd_forecast(
    config: dict[str, Any], ctx: RunContext, coefficients: Path | None = None
) -> list[Path]:
    """
    Rolling forecasts per model, QLIKE table over the common window.

    A coefficients file (--coefficients or the config key) adds a model named
    'fixed' that forecasts every window with those coefficients.
    """
    panel = _read_input(config)
    window, horizon = int(config["window"]), int(config["horizon"])
    models = [model_from_config(block, config) for block in config.get("models", [])]
    source = coefficients or config.get("coefficients")
    if source is not None:
        tensor = read_coefficients(Path(source))
        models.append(
            ModelConfig(
                n_lags=tensor.dims[2],
                fixed_tensor=tensor,
                log_transform=bool(config.get("log_transform", False)),
                name="fixed",
            )
        )
    if not models:
        raise ConfigError(
            "forecast needs at least one model", hint="Add 'models' or pass --coefficients"
        )
    ids = [m.model_id for m in models]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"model ids must be unique, got {ids}", hint="Give each model a 'name'")

    files = []
    rows = []
    for model in models:
        run = rolling_forecast(panel, model, window, horizon)
        path = ctx.out_dir / f"forecasts_{run.model_id}.csv"
        run.to_frame().to_csv(path, index=False, float_format="%.17g")
        files.append(path)
        rows.append(score_run(run))
    table = pd.DataFrame(rows)
    files.append(ctx.out_dir / "qlike.csv")
    table.to_csv(files[-1], index=False, float_format="%.17g")

    _finish(ctx, "forecast", config, files)
    for row in rows:
        print(f"✓ {row['model']}: mean QLIKE {row['mean_qlike']:.6g}")
    return files


def cmd_select_rank(config: dict[str, Any], ctx: RunContext) -> list[Path]:
    """BIC over a rank grid; prints the selected ranks."""
    centered = center_and_transform(_read_input(config), bool(config.get("log_transform", False)))
    n_lags = int(config.get("n_lags", HAR_MONTH))
    grid = config.get("rank_grid") or default_rank_grid(
        centered.n_assets, n_lags, int(config.get("rank_max", DEFAULT_RANK_MAX))
    )
    scores = bic_scores(
        centered,
        n_lags,
        lam=float(config.get("lambda", DEFAULT_BIC_LAMBDA)),
        rank_grid=grid,
        pgd_template=_pgd(config, (1, 1, 1)),
        threads=ctx.threads,
    )
    best = best_bic(scores)
    table = pd.DataFrame(
        [
            {
                "r1": s.ranks[0],
                "r2": s.ranks[1],
                "r3": s.ranks[2],
                "bic": s.bic,
                "loss": s.loss,
                "d_M": s.d_M,
                "selected": s is best,
            }
            for s in scores
        ]
    )
    files = [ctx.out_dir / "bic.csv"]
    table.to_csv(files[0], index=False, float_format="%.17g")
    files.append(
        write_json(
            {"ranks": list(best.ranks), "bic": best.bic, "d_M": best.d_M},
            ctx.out_dir / "selected.json",
        )
    )

    _finish(ctx, "select-rank", config, files, {"selected_ranks": list(best.ranks)})
    print(f"Selected ranks: {best.ranks}")
    return files


def _tuple(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tuple(v) for v in value)
    return value


def experiment_config(
    name: str, config: dict[str, Any], ctx: RunContext
) -> AsymptoticsConfig | ErrorBoundConfig | ConvergenceConfig:
    """Experiment settings from the config, with --reps and --threads applied."""
    fields = {k: _tuple(v) for k, v in config.items() if k != "process"}
    fields["threads"] = ctx.threads
    if ctx.reps is not None:
        fields["replications"] = ctx.reps
    if name == ERROR_BOUND:
        return ErrorBoundConfig(**fields)
    if name == ASYMPTOTICS:
        process = HarItoDesign(**config.get("process", {}))
        return AsymptoticsConfig(process=process, **fields)
    process = HarItoDesign(**{"n_assets": 30, **config.get("process", {})})
    return ConvergenceConfig(process=process, **fields)


def cmd_experiment(name: str, config: dict[str, Any], ctx: RunContext) -> list[Path]:
    settings = experiment_config(name, config, ctx)
    report: ExperimentReport
    if name == ASYMPTOTICS:
        report = experiment_asymptotics(settings, ctx.seed)  # type: ignore[arg-type]
    elif name == ERROR_BOUND:
        report = experiment_error_bound(settings, ctx.seed)  # type: ignore[arg-type]
    elif name == CONVERGENCE:
        report = experiment_convergence(settings, ctx.seed)  # type: ignore[arg-type]
    else:
        raise ConfigError(f"unknown experiment '{name}'")
    files = report.write_tables(ctx.out_dir)
    _finish(
        ctx,
        f"experiment {name}",
        config,
        files,
        {
            "failures": report.failures,
            "replications": report.replications,
            "step_size": experiment_step_size(settings),
        },
    )
    print(f"✓ {name}: {len(report.rows)} rows, {len(report.curves)} curves")
    if report.failures:
        print(f"✗ {report.failures} replications failed and were left out")
    return files


def run(args: argparse.Namespace, settings: Settings) -> None:
    subcommand = args.command if args.command != "experiment" else f"experiment {args.name}"
    config = load_run_config(args.config, subcommand)
    ctx = RunContext(
        seed=args.seed,
        out_dir=args.out,
        threads=_positive(args.threads, "threads") or config.get("threads") or settings.threads,
        reps=_positive(args.reps, "reps"),
        settings=settings,
    )
    if ctx.seed < 0:
        raise ConfigError(f"--seed must be nonnegative, got {ctx.seed}")
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"{subcommand}: seed {ctx.seed}, threads {ctx.threads}", action="run_start")

    if args.command == "simulate":
        cmd_simulate(config, ctx)
    elif args.command == "estimate":
        cmd_estimate(config, ctx, args.method)
    elif args.command == "forecast":
        cmd_forecast(config, ctx, args.coefficients)
    elif args.command == "select-rank":
        cmd_select_rank(config, ctx)
    else:
        if args.reference_step:
            config = {**config, "reference_step": True}
        cmd_experiment(args.name, config, ctx)


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run one subcommand and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    bootstrap_env()
    settings = get_settings()
    setup_structured_logging(
        (args.log_level or settings.log_level).upper(), json_format=settings.log_format == "json"
    )
    set_run_id(new_run_id())

    try:
        run(args, settings)
    except ConfigError as e:
        print(format_console_error(e), file=sys.stderr)
        return EXIT_USAGE
    except MlrHarError as e:
        print(format_console_error(e), file=sys.stderr)
        logger.error(f"{args.command} failed: {e}", action="run_failed")
        return EXIT_FAILURE
    except OSError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print("\n✗ Operation cancelled", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
