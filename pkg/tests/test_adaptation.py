from __future__ import annotations

import numpy as np
import pytest

from adaptive_gamp.config import LNP_TRUTH
from adaptive_gamp.errors import ConfigError, ConvergenceError
from adaptive_gamp.services import adaptation
from adaptive_gamp.services.adaptation import (
    AdaptationPlan,
    EmInputStrategy,
    EmNoiseStrategy,
    MlOutputStrategy,
    OracleStrategy,
    adapt_input,
    adapt_noise_em,
    adapt_oracle,
    adapt_output,
    adapt_output_ml,
    estimate_var_z,
    initial_output_params,
    input_objective,
    output_objective,
)
from adaptive_gamp.services.channels import AwgnOutput, PoissonLnpOutput
from adaptive_gamp.services.model import (
    AwgnParams,
    InputParams,
    PoissonLnpParams,
    apply_output_channel,
    generate_gauss_bernoulli,
    lnp_log_rate,
)
from adaptive_gamp.services.quadrature import gauss_hermite


def _noisy_signal(size: int, params: InputParams, tau_r: float, rng) -> np.ndarray:
    x = generate_gauss_bernoulli(size, params, seed=21)
    return x + np.sqrt(tau_r) * rng.standard_normal(size)


@pytest.fixture(scope="module")
def lnp_sample():
    rng = np.random.Generator(np.random.PCG64(77))
    z = rng.standard_normal(50_000)
    y, _ = apply_output_channel(z, PoissonLnpParams(LNP_TRUTH), seed=78)
    return y


def test_em_recovers_prior_from_large_sample(rng):
    truth = InputParams(rho=0.2, sigma_x_sq=5.0)
    r = _noisy_signal(100_000, truth, 0.1, rng)
    fit = adapt_input(
        EmInputStrategy(max_em_iters=500, tol=1e-8), r, 0.1, InputParams(rho=0.5, sigma_x_sq=1.0)
    )
    assert fit.converged and not fit.degenerate
    assert fit.params.rho == pytest.approx(0.2, abs=0.02)
    assert fit.params.sigma_x_sq == pytest.approx(5.0, rel=0.05)
    assert input_objective(r, 0.1, fit.params) >= input_objective(r, 0.1, truth) - 1e-6


def test_em_objective_never_decreases(rng):
    r = _noisy_signal(5_000, InputParams(rho=0.1, sigma_x_sq=2.0), 0.5, rng)
    fit = adapt_input(EmInputStrategy(max_em_iters=50), r, 0.5, InputParams(rho=0.6, sigma_x_sq=0.3))
    trace = np.asarray(fit.objective_trace)
    assert trace.size == fit.iterations + 1
    assert np.all(np.diff(trace) >= -1e-10 * np.maximum(1.0, np.abs(trace[:-1])))
    assert len(fit.params_trace) == trace.size


def test_em_with_empty_support_is_degenerate(rng):
    r = rng.standard_normal(1000)
    fit = adapt_input(EmInputStrategy(), r, 1.0, InputParams(rho=0.0, sigma_x_sq=1.0))
    assert fit.degenerate
    assert fit.params.rho == 0.0


def test_oracle_strategies_return_previous_parameters(rng):
    prev_x = InputParams(rho=0.3, sigma_x_sq=2.0)
    prev_z = AwgnParams(0.2)
    assert adapt_input(OracleStrategy(), rng.standard_normal(10), 1.0, prev_x).params is prev_x
    fit = adapt_output(OracleStrategy(), np.zeros(10), np.ones(10), 1.0, prev_z, AwgnOutput())
    assert fit.params is prev_z
    assert adapt_oracle(prev_x, prev_z) == (prev_x, prev_z)


def test_ml_ascent_is_monotone_and_beats_the_truth(lnp_sample):
    quad = gauss_hermite()
    fit = adapt_output_ml(
        np.zeros(lnp_sample.size),
        lnp_sample,
        1.0,
        initial_output_params(MlOutputStrategy(), 3),
        MlOutputStrategy(),
        quad,
    )
    trace = np.asarray(fit.objective_trace)
    assert np.all(np.diff(trace) >= 0.0)
    truth_objective = output_objective(lnp_sample, 1.0, PoissonLnpParams(LNP_TRUTH), quad)
    assert trace[-1] >= truth_objective - 1e-4
    assert fit.params.order == 3


def test_ml_ascent_stays_in_box(lnp_sample):
    strategy = MlOutputStrategy(box=((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)))
    fit = adapt_output_ml(
        np.zeros(lnp_sample.size), lnp_sample, 1.0, PoissonLnpParams((0.0, 0.0, 0.0)), strategy, gauss_hermite()
    )
    assert np.all(np.abs(fit.params.as_vector()) <= 1.0)


def test_zero_ascent_iterations_freeze_lambda_z(lnp_sample):
    prev = PoissonLnpParams((1.0, 2.0, 3.0))
    fit = adapt_output_ml(
        np.zeros(lnp_sample.size), lnp_sample, 1.0, prev, MlOutputStrategy(max_ascent_iters=0), gauss_hermite()
    )
    assert fit.params is prev
    assert fit.iterations == 0


def test_output_strategy_must_match_channel():
    p, y = np.zeros(5), np.ones(5)
    with pytest.raises(ConfigError):
        adapt_output(MlOutputStrategy(), p, y, 1.0, AwgnParams(0.1), AwgnOutput())
    with pytest.raises(ConfigError):
        adapt_output(EmNoiseStrategy(), p, y, 1.0, PoissonLnpParams(LNP_TRUTH), PoissonLnpOutput())


def test_noise_em_fixed_point(rng):
    y = np.sqrt(2.0) * rng.standard_normal(100_000)
    fit = adapt_noise_em(
        np.zeros(y.size), y, 1.0, AwgnParams(0.3), EmNoiseStrategy(max_em_iters=2000, tol=1e-10)
    )
    assert fit.converged
    assert fit.params.sigma_sq == pytest.approx(float(np.mean(y**2)) - 1.0, abs=1e-6)


def test_var_z_estimate_adds_tau_p():
    assert estimate_var_z(np.array([1.0, -1.0, 3.0, -3.0]), 0.5) == pytest.approx(5.5)


def test_plan_validation_and_cadence():
    plan = AdaptationPlan(input=EmInputStrategy(), every=3)
    assert not plan.is_oracle
    assert [plan.active(t) for t in range(4)] == [True, False, False, True]
    assert AdaptationPlan().is_oracle
    with pytest.raises(ConfigError):
        AdaptationPlan(input=MlOutputStrategy())
    with pytest.raises(ConfigError):
        MlOutputStrategy(ftol=0.0)
    with pytest.raises(ConfigError):
        MlOutputStrategy(box=((1.0, -1.0),))
    with pytest.raises(ConfigError):
        MlOutputStrategy(box=((-1.0, 1.0),)).bounds(3)


def test_em_near_noiseless_dense_signal(rng):
    r = _noisy_signal(100_000, InputParams(rho=1.0, sigma_x_sq=1.0), 1e-6, rng)
    fit = adapt_input(EmInputStrategy(), r, 1e-6, InputParams(rho=0.5, sigma_x_sq=0.5))
    assert fit.params.rho >= 0.99
    assert fit.params.sigma_x_sq == pytest.approx(1.0, rel=0.05)


def test_em_on_zero_data_shrinks_support():
    fit = adapt_input(EmInputStrategy(max_em_iters=50), np.zeros(1000), 0.5, InputParams(rho=0.5, sigma_x_sq=2.0))
    rhos = [params.rho for params in fit.params_trace]
    assert np.all(np.diff(rhos) < 0.0)
    assert rhos[-1] < 0.5


def _underdispersed_poisson_sample(mean: float, size: int) -> np.ndarray:
    # the constant rate is the unique maximizer only when the sample variance is below its mean
    for seed in range(1000):
        y = np.random.default_rng(seed).poisson(mean, size=size).astype(np.float64)
        if np.var(y) <= 0.95 * np.mean(y):
            return y
    raise AssertionError("no underdispersed sample found")


def test_ml_constant_rate_recovers_the_mean():
    y = _underdispersed_poisson_sample(3.0, 2_000)
    quad = gauss_hermite()
    fit = adapt_output_ml(
        np.zeros(y.size), y, 1.0, PoissonLnpParams((0.0, 0.0, 0.0)), MlOutputStrategy(), quad
    )
    constant = PoissonLnpParams((float(np.log(np.mean(y))), 0.0, 0.0))
    assert fit.objective_trace[-1] >= output_objective(y, 1.0, constant, quad) - 1e-10

    lambda_hat = fit.params.as_vector()
    assert lambda_hat[0] == pytest.approx(np.log(3.0), abs=0.05)
    np.testing.assert_allclose(lambda_hat[1:], 0.0, atol=0.1)
    z = quad.points(0.0, 1.0)
    predicted_mean = np.sum(np.exp(quad.log_weights) * np.exp(lnp_log_rate(z, lambda_hat)))
    assert predicted_mean == pytest.approx(3.0, abs=0.1)


def test_ml_recovers_lnp_rate_polynomial():
    rng = np.random.Generator(np.random.PCG64(2024))
    var_z = 3.0
    z = np.sqrt(var_z) * rng.standard_normal(10_000)
    y, _ = apply_output_channel(z, PoissonLnpParams(LNP_TRUTH), seed=2025)
    strategy = MlOutputStrategy()
    fit = adapt_output_ml(
        np.zeros(y.size), y, var_z, initial_output_params(strategy, 3), strategy, gauss_hermite()
    )
    assert np.max(np.abs(fit.params.as_vector() - np.asarray(LNP_TRUTH))) <= 0.3


def test_mirrored_rate_polynomial_has_the_same_marginal(lnp_sample):
    a, b, c = LNP_TRUTH
    mirrored = PoissonLnpParams((a + b + c, -(b + 2.0 * c), c))
    quad = gauss_hermite()
    assert output_objective(lnp_sample, 1.0, mirrored, quad) == pytest.approx(
        output_objective(lnp_sample, 1.0, PoissonLnpParams(LNP_TRUTH), quad), rel=1e-10
    )


def test_em_objective_decrease_raises(monkeypatch, rng):
    values = iter([0.0, -1.0])
    monkeypatch.setattr(adaptation, "input_objective", lambda r, tau_r, params: next(values))
    r = _noisy_signal(500, InputParams(rho=0.2, sigma_x_sq=1.0), 0.1, rng)
    with pytest.raises(ConvergenceError) as excinfo:
        adapt_input(EmInputStrategy(), r, 0.1, InputParams(rho=0.5, sigma_x_sq=1.0))
    assert excinfo.value.iteration == 1
    assert excinfo.value.to_dict()["error"] == "convergence_error"


def test_fit_is_reported_on_the_increasing_branch(lnp_sample):
    a, b, c = LNP_TRUTH
    mirrored_start = PoissonLnpParams((a + b + c, -(b + 2.0 * c), c))
    fit = adapt_output_ml(
        np.zeros(lnp_sample.size), lnp_sample, 1.0, mirrored_start, MlOutputStrategy(), gauss_hermite()
    )
    lambda_hat = fit.params.as_vector()
    assert lambda_hat[1] + lambda_hat[2] >= 0.0
    assert lambda_hat[1] > 0.0


def test_default_start_breaks_the_mirror_symmetry():
    start = initial_output_params(MlOutputStrategy(), 3)
    assert start == PoissonLnpParams((0.0, 1.0, 0.0))
    narrow = initial_output_params(MlOutputStrategy(box=((-1.0, 1.0), (0.0, 1.0), (-1.0, 1.0))), 3)
    assert narrow.lambda_z[1] == pytest.approx(0.75)
