"""Unit tests for the OLS, MRI, MLR, VHAR and VHARI estimators and their diagnostics."""

import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize

from apps.mlrhar.core.diffusion_sim import MeasureKind, RealizedPanel
from apps.mlrhar.core.errors import (
    DimensionError,
    InsufficientHistoryError,
    InvalidSpecError,
    NonStationaryError,
    SingularDesignError,
)
from apps.mlrhar.core.estimators import (
    BicScore,
    Method,
    PgdConfig,
    asymptotic_covariance,
    asymptotic_covariance_from_moments,
    best_bic,
    bic_scores,
    build_design,
    default_rank_grid,
    dependence_diagnostics,
    fit_by_method,
    fit_mlr,
    fit_mri,
    fit_ols,
    fit_vhar,
    fit_vhari,
    loss,
    loss_gradient,
    parameter_count,
    sample_moments,
    select_ranks_bic,
)
from apps.mlrhar.core.experiments import HarItoDesign, har_ito_spec
from apps.mlrhar.core.har_model import InnovationSpec, VarCoefficients, high_to_low_frequency
from apps.mlrhar.core.tensor_core import (
    Tensor3,
    TuckerFactors,
    fold,
    hosvd,
    matricize,
    mode_multiply,
    multilinear_ranks,
)
from apps.mlrhar.tests.fixtures import (
    EXACT_N,
    EXACT_P,
    EXACT_RANKS,
    exact_rank_coefficients,
    exact_rank_panel,
    orthonormal,
    random_centered_panel,
)


def ramp_panel(n_days=6):
    values = np.arange(float(n_days))[:, None]
    return RealizedPanel(values=values, measure_kind=MeasureKind.SYNTHETIC, centered=True)


def zero_panel(n_days=30, n_assets=2):
    return RealizedPanel(
        values=np.zeros((n_days, n_assets)), measure_kind=MeasureKind.SYNTHETIC, centered=True
    )


class TestRegressionDesign:
    def test_rows_are_newest_lag_first(self):
        design = build_design(ramp_panel(), 2)
        assert_allclose(design.responses[:, 0], [2.0, 3.0, 4.0, 5.0])
        assert_allclose(design.predictors, [[1, 0], [2, 1], [3, 2], [4, 3]])
        assert design.n_obs == 4
        assert design.n_days == 6
        assert design.dims == (1, 1, 2)

    def test_requires_centered_panel(self):
        panel = RealizedPanel(values=np.ones((10, 1)), measure_kind=MeasureKind.RV)
        with pytest.raises(InvalidSpecError):
            build_design(panel, 2)

    def test_requires_history(self):
        with pytest.raises(InsufficientHistoryError):
            build_design(ramp_panel(3), 3)


class TestLoss:
    def setup_method(self):
        self.panel = random_centered_panel(40, 2, seed=7)
        self.design = build_design(self.panel, 2)
        self.tensor = Tensor3(np.random.default_rng(3).standard_normal((2, 2, 2)) * 0.2)

    def test_matches_explicit_sum(self):
        y = self.panel.values
        total = 0.0
        for n in range(2, 40):
            fitted = self.tensor.data[:, :, 0] @ y[n - 1] + self.tensor.data[:, :, 1] @ y[n - 2]
            total += float(np.sum((y[n] - fitted) ** 2))
        assert loss(self.design, self.tensor) == pytest.approx(total / 40, rel=1e-12)

    def test_cached_moments_agree(self):
        unfolding = matricize(self.tensor, 1)
        assert self.design.loss_from_unfolding(unfolding) == pytest.approx(
            loss(self.design, self.tensor), rel=1e-10
        )

    def test_gradient_matches_finite_differences(self):
        """The loss is quadratic, so central differences are exact up to rounding."""
        grad = loss_gradient(self.design, self.tensor).data
        h = 1e-5
        numeric = np.zeros_like(grad)
        for idx in np.ndindex(grad.shape):
            bump = np.zeros(grad.shape)
            bump[idx] = h
            up = loss(self.design, Tensor3(self.tensor.data + bump))
            down = loss(self.design, Tensor3(self.tensor.data - bump))
            numeric[idx] = (up - down) / (2 * h)
        assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            loss(self.design, Tensor3.zeros((2, 2, 3)))


class TestOls:
    def test_scalar_closed_form(self):
        panel = random_centered_panel(50, 1, seed=2)
        y = panel.values[:, 0]
        expected = np.dot(y[1:], y[:-1]) / np.dot(y[:-1], y[:-1])
        fit = fit_ols(build_design(panel, 1))
        assert fit.tensor.data[0, 0, 0] == pytest.approx(expected, rel=1e-10)
        assert fit.method is Method.OLS
        assert fit.converged

    def test_too_few_rows(self):
        design = build_design(random_centered_panel(4, 2), 3)
        with pytest.raises(SingularDesignError, match="singular"):
            fit_ols(design)

    def test_collinear_predictors(self):
        panel = RealizedPanel(
            values=np.tile([1.0, -1.0], 20)[:, None],
            measure_kind=MeasureKind.SYNTHETIC,
            centered=True,
        )
        with pytest.raises(SingularDesignError):
            fit_ols(build_design(panel, 2))


class TestMri:
    def setup_method(self):
        self.design = build_design(exact_rank_panel(400), EXACT_P)

    def test_full_index_rank_is_ols(self):
        mri = fit_mri(self.design, EXACT_N)
        ols = fit_ols(self.design)
        assert_allclose(mri.tensor.data, ols.tensor.data)
        assert mri.ranks == (EXACT_N, EXACT_N, EXACT_P)

    def test_loss_is_monotone_and_bounded_by_ols(self):
        fit = fit_mri(self.design, 2)
        trace = np.array(fit.loss_trace)
        assert np.all(np.diff(trace) <= 1e-12 * trace[0])
        assert fit.final_loss >= fit_ols(self.design).final_loss - 1e-12

    def test_index_rank(self):
        fit = fit_mri(self.design, 2)
        assert multilinear_ranks(fit.tensor)[1] <= 2
        assert fit.ranks == (EXACT_N, 2, EXACT_P)

    def test_matches_general_optimizer(self):
        """L-BFGS over A_(2) = W V from random starts does not beat the alternation."""
        dims, r2 = self.design.dims, 2
        split = dims[1] * r2

        def objective(theta):
            w = theta[:split].reshape(dims[1], r2)
            v = theta[split:].reshape(r2, dims[0] * dims[2])
            tensor = fold(w @ v, 2, dims)
            grad = matricize(loss_gradient(self.design, tensor), 2)
            jac = np.concatenate([(grad @ v.T).ravel(), (w.T @ grad).ravel()])
            return loss(self.design, tensor), jac

        rng = np.random.default_rng(7)
        starts = [0.1 * rng.standard_normal(split + r2 * dims[0] * dims[2]) for _ in range(3)]
        options = {"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-10}
        best = min(
            optimize.minimize(objective, x0, jac=True, method="L-BFGS-B", options=options).fun
            for x0 in starts
        )
        alternating = fit_mri(self.design, r2).final_loss
        assert alternating <= best * (1 + 1e-8)
        assert best - alternating <= 1e-6 * alternating

    def test_rank_range(self):
        with pytest.raises(InvalidSpecError):
            fit_mri(self.design, 0)


class TestMlr:
    def test_zero_data(self):
        design = build_design(zero_panel(), 2)
        fit = fit_mlr(design, PgdConfig(ranks=(1, 1, 1)))
        assert_allclose(fit.tensor.data, 0.0)
        assert fit.final_loss == 0.0
        assert fit.converged
        assert fit.step_size == 1.0

    def test_full_rank_converges_to_ols(self):
        design = build_design(random_centered_panel(2000, 2, seed=12), 1)
        seen = []
        config = PgdConfig(ranks=(2, 2, 1), tolerance=1e-12, max_iterations=5000)
        fit = fit_mlr(design, config, callback=lambda k, _: seen.append(k))
        assert fit.converged
        assert_allclose(fit.tensor.data, fit_ols(design).tensor.data, atol=1e-8)
        assert seen == list(range(fit.iterations + 1))
        assert len(fit.loss_trace) == fit.iterations + 1

    def test_error_decays_geometrically_on_noiseless_data(self):
        truth = exact_rank_coefficients().tensor
        design = build_design(exact_rank_panel(2000), EXACT_P)
        design = dataclasses.replace(design, responses=design.predictors @ matricize(truth, 1).T)
        errors = []
        config = PgdConfig(ranks=EXACT_RANKS, max_iterations=20, tolerance=0.0)
        fit_mlr(design, config, callback=lambda _, tensor: errors.append((tensor - truth).norm()))
        ratios = np.array(errors[1:]) / np.array(errors[:-1])
        assert len(ratios) == 20
        assert np.mean(ratios < 1) >= 0.9
        assert errors[-1] < errors[0]

    def test_final_projection_onto_target_ranks(self):
        design = build_design(exact_rank_panel(300), EXACT_P)
        config = PgdConfig(ranks=(1, 1, 1), running_ranks=EXACT_RANKS, max_iterations=50)
        fit = fit_mlr(design, config)
        assert multilinear_ranks(fit.tensor) == (1, 1, 1)
        assert fit.running_loss is not None

    def test_hits_iteration_cap(self):
        design = build_design(exact_rank_panel(300), EXACT_P)
        fit = fit_mlr(design, PgdConfig(ranks=EXACT_RANKS, max_iterations=2, tolerance=0.0))
        assert not fit.converged
        assert fit.iterations == 2
        assert any("no convergence" in w for w in fit.warnings)

    def test_config_validation(self):
        dims = (2, 2, 1)
        bad = [
            PgdConfig(ranks=(3, 1, 1)),
            PgdConfig(ranks=(2, 2, 1), running_ranks=(1, 1, 1)),
            PgdConfig(ranks=(1, 1, 1), step_size=-1.0),
            PgdConfig(ranks=(1, 1, 1), max_iterations=0),
        ]
        for config in bad:
            with pytest.raises(InvalidSpecError):
                config.validate(dims)

    def test_initializer_dims(self):
        config = PgdConfig(ranks=(1, 1, 1), initializer=Tensor3.zeros((3, 3, 1)))
        with pytest.raises(DimensionError):
            config.validate((2, 2, 1))


class TestHarFits:
    def setup_method(self):
        self.design = build_design(random_centered_panel(300, 2, seed=4), 22)

    def test_vhar_lags_share_horizon_weights(self):
        lags = fit_vhar(self.design).tensor.data
        assert multilinear_ranks(fit_vhar(self.design).tensor)[2] <= 3
        assert_allclose(lags[:, :, 1], lags[:, :, 4], atol=1e-12)
        assert_allclose(lags[:, :, 5], lags[:, :, 21], atol=1e-12)

    def test_vhari_index_rank(self):
        fit = fit_vhari(self.design, 1)
        assert fit.method is Method.VHARI
        assert multilinear_ranks(fit.tensor)[1] <= 1

    def test_dispatch(self):
        assert fit_by_method(self.design, "ols").method is Method.OLS
        assert fit_by_method(self.design, "mri", ranks=(2, 1, 3)).ranks == (2, 1, 22)
        with pytest.raises(InvalidSpecError):
            fit_by_method(self.design, Method.MLR)


class TestRankSelection:
    def test_parameter_count(self):
        assert parameter_count(5, 22, (2, 2, 3)) == 81

    def test_default_grid(self):
        grid = default_rank_grid(2, 3)
        assert len(grid) == 12
        assert grid[0] == (1, 1, 1)
        assert grid[-1] == (2, 2, 3)

    def test_grid_outside_dims(self):
        with pytest.raises(InvalidSpecError):
            bic_scores(random_centered_panel(100, 2), 2, rank_grid=[(3, 1, 1)])

    def test_best_bic_tie_breaks(self):
        scores = [
            BicScore((2, 2, 2), 1.0, 1.0, 20),
            BicScore((1, 2, 2), 1.0, 1.0, 10),
            BicScore((1, 1, 3), 1.0, 1.0, 10),
        ]
        assert best_bic(scores).ranks == (1, 1, 3)
        with pytest.raises(InvalidSpecError):
            best_bic([])

    def test_recovers_exact_ranks(self):
        grid = [(r1, r2, r3) for r1 in (1, 2, 3) for r2 in (1, 2, 3) for r3 in (2, 3, 4)]
        selected = select_ranks_bic(exact_rank_panel(5000), EXACT_P, lam=1.0, rank_grid=grid)
        assert selected == EXACT_RANKS


class TestAsymptoticCovariance:
    def test_white_noise_ols_is_identity(self):
        cov = asymptotic_covariance(VarCoefficients.zeros(2, 2), InnovationSpec.identity(2), "ols")
        assert_allclose(cov, np.eye(8), atol=1e-12)

    def test_restricted_estimators_are_more_efficient(self):
        coeffs = exact_rank_coefficients()
        innov = InnovationSpec.identity(EXACT_N)
        tucker = hosvd(coeffs.tensor, EXACT_RANKS)
        ols = asymptotic_covariance(coeffs, innov, Method.OLS)
        mri = asymptotic_covariance(coeffs, innov, Method.MRI, r2=2)
        mlr = asymptotic_covariance(coeffs, innov, Method.MLR, tucker=tucker)
        assert np.min(np.linalg.eigvalsh(ols - mri)) >= -1e-8
        assert np.min(np.linalg.eigvalsh(mri - mlr)) >= -1e-8
        assert np.trace(mlr) < np.trace(ols)

    def test_ordering_on_har_ito_design(self):
        coeffs = high_to_low_frequency(har_ito_spec(HarItoDesign()))
        assert multilinear_ranks(coeffs.tensor) == (2, 2, 3)
        innov = InnovationSpec.identity(coeffs.n_assets)
        ols = asymptotic_covariance(coeffs, innov, Method.OLS)
        mri = asymptotic_covariance(coeffs, innov, Method.MRI, r2=2)
        mlr = asymptotic_covariance(
            coeffs, innov, Method.MLR, tucker=hosvd(coeffs.tensor, (2, 2, 3))
        )
        assert np.min(np.linalg.eigvalsh(ols - mri)) >= -1e-8
        assert np.min(np.linalg.eigvalsh(mri - mlr)) >= -1e-8

    def test_full_rank_mlr_matches_ols(self):
        coeffs = exact_rank_coefficients()
        innov = InnovationSpec.identity(EXACT_N)
        tucker = hosvd(coeffs.tensor, coeffs.tensor.dims)
        ols = asymptotic_covariance(coeffs, innov, Method.OLS)
        mlr = asymptotic_covariance(coeffs, innov, Method.MLR, tucker=tucker)
        assert_allclose(mlr, ols, atol=1e-7)

    def test_mlr_invariant_to_factor_rotation(self):
        coeffs = exact_rank_coefficients()
        innov = InnovationSpec.identity(EXACT_N)
        tucker = hosvd(coeffs.tensor, EXACT_RANKS)
        baseline = asymptotic_covariance(coeffs, innov, Method.MLR, tucker=tucker)
        for seed in (1, 2):
            rotations = [orthonormal(r, r, seed + 10 * k) for k, r in enumerate(EXACT_RANKS)]
            core = tucker.core
            for mode, q in enumerate(rotations, start=1):
                core = mode_multiply(core, q.T, mode)
            factors = tuple(u @ q for u, q in zip(tucker.factors, rotations, strict=True))
            rotated = TuckerFactors(core, factors)
            assert_allclose(rotated.reconstruct().data, coeffs.tensor.data, atol=1e-12)
            cov = asymptotic_covariance(coeffs, innov, Method.MLR, tucker=rotated)
            assert_allclose(cov, baseline, atol=1e-6)

    def test_unsupported_method(self):
        with pytest.raises(InvalidSpecError):
            asymptotic_covariance_from_moments(np.eye(2), np.eye(1), Method.VHAR)

    def test_sample_moments_of_white_noise(self):
        design = build_design(random_centered_panel(4000, 2, seed=21), 2)
        gamma_hat, sigma_hat = sample_moments(design)
        assert_allclose(gamma_hat, np.eye(4), atol=0.1)
        assert_allclose(sigma_hat, np.eye(2), atol=0.1)


class TestDependenceDiagnostics:
    def test_scalar_ar1(self):
        """|1 - a e^{i theta}|^2 = 1 + a^2 - 2 a cos(theta) spans [(1-a)^2, (1+a)^2]."""
        coeffs = VarCoefficients.from_lag_matrices([[[0.5]]])
        report = dependence_diagnostics(coeffs, InnovationSpec.identity(1), (1, 1, 1))
        assert report.mu_min == pytest.approx(0.25, abs=1e-10)
        assert report.mu_max == pytest.approx(2.25, abs=1e-10)
        assert report.kappa_U == pytest.approx(4.0, rel=1e-9)
        assert report.kappa_L == pytest.approx(1 / 2.25, rel=1e-9)
        assert report.suggested_step_size == pytest.approx(1 / 6, rel=1e-9)
        assert report.d_M == 1
        assert report.to_dict()["grid_size"] == 720

    def test_non_stationary(self):
        coeffs = VarCoefficients.from_lag_matrices([[[1.2]]])
        with pytest.raises(NonStationaryError):
            dependence_diagnostics(coeffs, InnovationSpec.identity(1), (1, 1, 1))

    def test_grid_too_coarse(self):
        coeffs = VarCoefficients.from_lag_matrices([[[0.5]]])
        with pytest.raises(InvalidSpecError):
            dependence_diagnostics(coeffs, InnovationSpec.identity(1), (1, 1, 1), grid_size=2)
