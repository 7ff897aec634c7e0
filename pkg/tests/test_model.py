from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from adaptive_gamp.errors import (
    ChannelOverflowError,
    ConfigError,
    DimensionError,
    DomainError,
    ParameterValidationError,
)
from adaptive_gamp.services.model import (
    AwgnParams,
    InputParams,
    PoissonLnpParams,
    apply_output_channel,
    derive_seeds,
    generate_gauss_bernoulli,
    generate_instance,
    generate_matrix,
    lnp_basis,
    lnp_log_rate,
    mirror_rate_polynomial,
    output_params_from_dict,
)


def test_instance_is_deterministic_in_seed(sparse_prior):
    first = generate_instance(50, 80, sparse_prior, AwgnParams(0.1), seed=3)
    second = generate_instance(50, 80, sparse_prior, AwgnParams(0.1), seed=3)
    other = generate_instance(50, 80, sparse_prior, AwgnParams(0.1), seed=4)

    for name in ("a_matrix", "x_true", "z_true", "w_noise", "y_obs"):
        np.testing.assert_array_equal(getattr(first, name), getattr(second, name))
    assert not np.array_equal(first.x_true, other.x_true)


def test_instance_shapes_and_consistency(awgn_instance):
    inst = awgn_instance
    assert (inst.m, inst.n) == (300, 500)
    assert inst.beta == pytest.approx(500 / 300)
    np.testing.assert_allclose(inst.z_true, inst.a_matrix @ inst.x_true)
    np.testing.assert_allclose(inst.y_obs, inst.z_true + inst.w_noise)


def test_matrix_entries_have_variance_one_over_m():
    a = generate_matrix(400, 500, seed=1)
    assert np.var(a) == pytest.approx(1.0 / 400, rel=0.02)
    assert abs(np.mean(a)) < 3.0 * np.sqrt(1.0 / 400 / a.size)


def test_gauss_bernoulli_support_fraction():
    x = generate_gauss_bernoulli(200_000, InputParams(rho=0.2, sigma_x_sq=5.0), seed=9)
    assert np.mean(x != 0.0) == pytest.approx(0.2, abs=0.005)
    assert np.var(x[x != 0.0]) == pytest.approx(5.0, rel=0.03)


def test_zero_sparsity_gives_zero_signal():
    x = generate_gauss_bernoulli(1000, InputParams(rho=0.0, sigma_x_sq=1.0), seed=2)
    assert not np.any(x)


def test_poisson_observations_invert_the_cdf():
    z = np.linspace(-2.0, 2.0, 2000)
    params = PoissonLnpParams((0.0, 2.0))
    y, w = apply_output_channel(z, params, seed=8)

    assert np.all(y >= 0) and np.all(y == np.round(y))
    assert np.all((w >= 0.0) & (w < 1.0))
    rate = np.exp(lnp_basis(z, 2) @ np.array([0.0, 2.0]))
    np.testing.assert_array_equal(y, stats.poisson.ppf(w, rate))


def test_poisson_rate_overflow_is_reported_with_index():
    z = np.array([0.0, 1.0])
    with pytest.raises(ChannelOverflowError) as excinfo:
        apply_output_channel(z, PoissonLnpParams((800.0,)), seed=0)
    assert excinfo.value.index == 0
    assert excinfo.value.to_dict()["error"] == "channel_overflow"


def test_lnp_basis_powers_of_sigmoid():
    basis = lnp_basis(np.array([0.0]), 3)
    np.testing.assert_allclose(basis, [[1.0, 0.5, 0.25]])


def test_derive_seeds_is_stable():
    assert derive_seeds(5, 3) == derive_seeds(5, 3)
    assert len(set(derive_seeds(5, 3))) == 3


@pytest.mark.parametrize(
    "kwargs, error",
    [
        ({"rho": 1.5, "sigma_x_sq": 1.0}, DomainError),
        ({"rho": 0.5, "sigma_x_sq": 0.0}, DomainError),
        ({"rho": float("nan"), "sigma_x_sq": 1.0}, DomainError),
    ],
)
def test_input_params_validation(kwargs, error):
    with pytest.raises(error):
        InputParams(**kwargs)


def test_output_params_validation():
    with pytest.raises(DomainError):
        AwgnParams(-0.1)
    with pytest.raises(DimensionError):
        PoissonLnpParams(())
    with pytest.raises(ConfigError):
        output_params_from_dict({"kind": "probit"})
    assert output_params_from_dict({"kind": "awgn", "sigma_sq": 0.5}) == AwgnParams(0.5)


def test_generation_rejects_bad_dimensions(sparse_prior):
    with pytest.raises(DimensionError):
        generate_instance(0, 10, sparse_prior, AwgnParams(0.1), seed=0)
    with pytest.raises(ParameterValidationError):
        generate_instance(10, 10, sparse_prior, AwgnParams(0.1), seed=-1)


def test_noiseless_awgn_returns_z():
    z = np.linspace(-1.0, 1.0, 11)
    y, w = apply_output_channel(z, AwgnParams(0.0), seed=4)
    np.testing.assert_array_equal(y, z)
    np.testing.assert_array_equal(w, 0.0)


def test_constant_rate_poisson_mean():
    y, _ = apply_output_channel(np.zeros(100_000), PoissonLnpParams((np.log(3.0), 0.0, 0.0)), seed=6)
    assert np.mean(y) == pytest.approx(3.0, abs=0.1)


def test_lnp_rate_at_zero():
    rate = np.exp(lnp_log_rate(np.array([0.0]), np.array([-4.88, 7.41, 2.58])))
    assert rate[0] == pytest.approx(np.exp(-4.88 + 7.41 * 0.5 + 2.58 * 0.25))


def test_awgn_noise_variance_matches_parameter():
    inst = generate_instance(10_000, 50, InputParams(rho=0.5, sigma_x_sq=1.0), AwgnParams(0.3), seed=12)
    assert np.mean((inst.y_obs - inst.z_true) ** 2) == pytest.approx(0.3, rel=0.05)


def test_mirrored_rate_polynomial_reflects_z():
    lambda_z = np.array([-4.88, 7.41, 2.58, -0.7])
    mirrored = mirror_rate_polynomial(lambda_z)
    z = np.linspace(-6.0, 6.0, 25)
    np.testing.assert_allclose(lnp_log_rate(-z, mirrored), lnp_log_rate(z, lambda_z), atol=1e-12)
    np.testing.assert_allclose(mirror_rate_polynomial(mirrored), lambda_z, atol=1e-12)
    np.testing.assert_allclose(mirror_rate_polynomial(np.array([1.5, 0.0, 0.0])), [1.5, 0.0, 0.0])
