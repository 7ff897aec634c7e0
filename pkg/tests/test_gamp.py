from __future__ import annotations

import numpy as np
import pytest

from adaptive_gamp.errors import ConfigError, DimensionError, DivergenceError
from adaptive_gamp.services.adaptation import (
    AdaptationPlan,
    EmInputStrategy,
    EmNoiseStrategy,
    MlOutputStrategy,
)
from adaptive_gamp.services.channels import (
    AwgnOutput,
    GaussBernoulliInput,
    PoissonLnpOutput,
    gauss_bernoulli_posterior,
)
from adaptive_gamp.services.gamp import (
    STEP_ORDER,
    GampConfig,
    default_initial_params,
    gamp_init,
    gamp_iterate,
    gamp_run,
    mse_to_db,
)
from adaptive_gamp.services.model import (
    AwgnParams,
    InputParams,
    PoissonLnpParams,
    ProblemInstance,
    generate_instance,
)


def test_init_sets_prior_variance():
    state = gamp_init((300, 400), (InputParams(rho=0.2, sigma_x_sq=5.0), AwgnParams(0.1)))
    assert state.tau_x == 1.0
    assert state.tau_p == pytest.approx(400 / 300)
    assert state.iter == 0
    assert not np.any(state.x_hat) and not np.any(state.s)


def test_init_floors_empty_prior():
    config = GampConfig(variance_floor=1e-10)
    state = gamp_init((5, 5), (InputParams(rho=0.0, sigma_x_sq=1.0), AwgnParams(0.1)), config)
    assert state.tau_x == 1e-10


def test_infinite_stop_tolerance_runs_one_iteration(awgn_instance):
    result = gamp_run(awgn_instance, GampConfig(stop_tol=float("inf")))
    assert result.iterations == 1
    assert result.converged


def test_trajectory_records_step_order(awgn_instance):
    result = gamp_run(awgn_instance, GampConfig(max_iters=3, stop_tol=0.0, record_trajectory=True))
    assert len(result.trajectory) == 3
    for record in result.trajectory:
        assert record.steps == STEP_ORDER
    assert list(result.trajectory[0].as_row()) == [
        "iter", "tau_p", "tau_r", "tau_x", "rho_hat", "sigma_x_sq_hat", "lambda_z_hat_0", "mse", "mse_db",
    ]


def test_gaussian_prior_converges_to_ridge_solution():
    prior, noise = InputParams(rho=1.0, sigma_x_sq=1.0), AwgnParams(0.1)
    inst = generate_instance(200, 100, prior, noise, seed=3)
    result = gamp_run(inst, GampConfig(max_iters=200, stop_tol=1e-13))

    a, y = inst.a_matrix, inst.y_obs
    ridge = np.linalg.solve(a.T @ a / 0.1 + np.eye(100), a.T @ y / 0.1)
    assert np.linalg.norm(result.final.x_hat - ridge) <= 1e-4 * np.linalg.norm(ridge)


def test_identity_matrix_reduces_to_scalar_denoising():
    prior, noise = InputParams(rho=0.3, sigma_x_sq=2.0), AwgnParams(0.5)
    n = 50
    rng = np.random.Generator(np.random.PCG64(0))
    y = rng.standard_normal(n)
    config = GampConfig()
    state = gamp_init((n, n), (prior, noise), config)
    new = gamp_iterate(state, np.eye(n), y, GaussBernoulliInput(), AwgnOutput(), config)

    tau_r = state.tau_x + noise.sigma_sq
    assert new.tau_r == pytest.approx(tau_r)
    np.testing.assert_allclose(new.r, y)
    expected, _, _ = gauss_bernoulli_posterior(y, tau_r, prior)
    np.testing.assert_allclose(new.x_hat, expected)
    assert new.iter == 1


def test_noiseless_overdetermined_recovery():
    inst = generate_instance(200, 100, InputParams(rho=0.1, sigma_x_sq=1.0), AwgnParams(0.0), seed=4)
    result = gamp_run(inst, GampConfig(max_iters=100))
    assert result.mse < 1e-6


def test_oracle_run_is_bit_reproducible(awgn_instance):
    first = gamp_run(awgn_instance, GampConfig(max_iters=20))
    second = gamp_run(awgn_instance, GampConfig(max_iters=20))
    np.testing.assert_array_equal(first.final.x_hat, second.final.x_hat)
    assert first.mse == second.mse


def test_non_finite_observation_names_the_step():
    prior, noise = InputParams(rho=0.3, sigma_x_sq=2.0), AwgnParams(0.5)
    y = np.array([0.0, np.inf, 1.0])
    config = GampConfig()
    state = gamp_init((3, 3), (prior, noise), config)
    with pytest.raises(DivergenceError) as excinfo:
        gamp_iterate(state, np.eye(3), y, GaussBernoulliInput(), AwgnOutput(), config)
    assert excinfo.value.step == "z_hat"
    assert excinfo.value.iteration == 0
    assert excinfo.value.to_dict()["error"] == "divergence"


@pytest.mark.parametrize(
    "kwargs, error",
    [
        ({"damping": 0.0}, ConfigError),
        ({"damping": 1.5}, ConfigError),
        ({"variance_floor": 0.0}, ConfigError),
        ({"max_iters": 0}, DimensionError),
    ],
)
def test_config_validation(kwargs, error):
    with pytest.raises(error):
        GampConfig(**kwargs)


def test_damped_run_still_converges(awgn_instance):
    plain = gamp_run(awgn_instance, GampConfig(max_iters=300))
    damped = gamp_run(awgn_instance, GampConfig(max_iters=300, damping=0.7))
    assert damped.mse == pytest.approx(plain.mse, rel=0.05)


def test_adaptive_em_run_learns_the_prior(awgn_instance):
    plan = AdaptationPlan(input=EmInputStrategy())
    result = gamp_run(awgn_instance, GampConfig(adaptation=plan, record_trajectory=True))
    oracle = gamp_run(awgn_instance, GampConfig())

    assert np.isfinite(result.mse)
    assert result.final.lambda_x_hat.rho == pytest.approx(0.1, abs=0.05)
    assert mse_to_db(result.mse) == pytest.approx(mse_to_db(oracle.mse), abs=3.0)


def test_default_initial_params(awgn_instance, poisson_instance):
    oracle_x, oracle_z = default_initial_params(awgn_instance, AdaptationPlan())
    assert oracle_x is awgn_instance.lambda_x_true and oracle_z is awgn_instance.lambda_z_true

    start_x, start_z = default_initial_params(
        awgn_instance, AdaptationPlan(input=EmInputStrategy(), output=EmNoiseStrategy())
    )
    assert start_x.rho == 0.5
    expected = np.var(awgn_instance.y_obs) * awgn_instance.m / awgn_instance.n
    assert start_x.sigma_x_sq == pytest.approx(expected)
    assert start_z.sigma_sq == pytest.approx(0.5 * np.var(awgn_instance.y_obs))

    _, lnp_start = default_initial_params(poisson_instance, AdaptationPlan(output=MlOutputStrategy()))
    assert lnp_start == PoissonLnpParams((0.0, 1.0, 0.0))


def test_poisson_run_with_learned_rate(poisson_instance):
    plan = AdaptationPlan(output=MlOutputStrategy(max_ascent_iters=50))
    result = gamp_run(
        poisson_instance,
        GampConfig(max_iters=15, adaptation=plan),
        output_ch=PoissonLnpOutput(),
    )
    assert np.isfinite(result.mse)
    assert result.final.lambda_z_hat.order == 3
    assert result.mse < poisson_instance.lambda_x_true.prior_variance


def test_mse_to_db():
    assert mse_to_db(0.1) == pytest.approx(-10.0)
    assert mse_to_db(0.0) == float("-inf")


def test_run_accepts_a_hand_built_instance():
    a = np.eye(4)
    x = np.array([0.0, 1.0, 0.0, -1.0])
    inst = ProblemInstance(
        a_matrix=a, x_true=x, z_true=x, w_noise=np.zeros(4), y_obs=x.copy(),
        lambda_x_true=InputParams(rho=0.5, sigma_x_sq=1.0), lambda_z_true=AwgnParams(0.01), seed=0,
    )
    result = gamp_run(inst, GampConfig(max_iters=50))
    assert result.mse < 0.05
