from __future__ import annotations

import numpy as np
import pytest

from adaptive_gamp.errors import ChannelOverflowError, ConfigError
from adaptive_gamp.services.channels import awgn_output, quadrature_output
from adaptive_gamp.services.quadrature import MAX_ORDER, check_finite, gauss_hermite, numeric_derivatives


def test_weights_integrate_against_exp_minus_t_squared():
    rule = gauss_hermite()
    assert rule.order == 41
    assert np.sum(rule.weights) == pytest.approx(np.sqrt(np.pi), rel=1e-12)
    assert np.sum(np.exp(rule.log_weights)) == pytest.approx(1.0, rel=1e-12)


def test_gaussian_moments():
    rule = gauss_hermite()
    z = rule.points(1.5, 2.0)
    weights = np.exp(rule.log_weights)
    assert np.sum(weights * z) == pytest.approx(1.5, rel=1e-12)
    assert np.sum(weights * z**2) == pytest.approx(2.0 + 1.5**2, rel=1e-12)


def test_rule_is_cached_and_read_only():
    assert gauss_hermite(41) is gauss_hermite(41)
    with pytest.raises(ValueError):
        gauss_hermite(41).nodes[0] = 0.0


@pytest.mark.parametrize("sigma_sq", [0.5, 0.75, 1.0])
def test_quadrature_matches_awgn_closed_form(sigma_sq):
    p = np.linspace(-1.0, 1.0, 9)
    y = np.linspace(0.5, -0.5, 9)
    tau_p = 1.0

    def log_likelihood(z):
        return -0.5 * (y[:, None] - z) ** 2 / sigma_sq

    numeric = quadrature_output(p, tau_p, log_likelihood, gauss_hermite())
    exact = awgn_output(p, y, tau_p, sigma_sq)
    for got, want in zip(numeric, exact):
        np.testing.assert_allclose(got, want, atol=1e-8)


def test_flat_likelihood_leaves_prior_unchanged():
    rule = gauss_hermite()
    mean, var, log_evidence = rule.laplace_moments(
        np.zeros(1), np.ones(1), lambda z: np.zeros_like(z)
    )
    assert log_evidence[0] == pytest.approx(0.0, abs=1e-12)
    assert mean[0] == pytest.approx(0.0, abs=1e-12)
    assert var[0] == pytest.approx(1.0, rel=1e-12)


def test_mode_centred_rule_is_exact_for_gaussian_likelihood():
    # N(z; 0, 1) prior times a likelihood peaked far out in the tail
    rule = gauss_hermite(5)
    obs, noise = 12.0, 1e-4

    def log_likelihood(z):
        return -0.5 * (obs - z) ** 2 / noise

    def derivatives(z):
        return (obs - z) / noise, np.full_like(z, -1.0 / noise)

    mean, var, log_evidence = rule.laplace_moments(np.zeros(1), np.ones(1), log_likelihood, derivatives)
    assert mean[0] == pytest.approx(obs / (1.0 + noise), rel=1e-10)
    assert var[0] == pytest.approx(noise / (1.0 + noise), rel=1e-8)
    want = 0.5 * np.log(noise / (1.0 + noise)) - 0.5 * obs**2 / (1.0 + noise)
    assert log_evidence[0] == pytest.approx(want, rel=1e-10)


def test_numeric_derivatives_of_quadratic():
    first, second = numeric_derivatives(lambda z: -0.5 * (z - 2.0) ** 2)(np.array([0.0, 3.0]))
    np.testing.assert_allclose(first, [2.0, -1.0], rtol=1e-6)
    np.testing.assert_allclose(second, -1.0, rtol=1e-4)


@pytest.mark.parametrize("order", [MAX_ORDER + 1, 300, 400])
def test_unsupported_orders_are_rejected(order):
    with pytest.raises(ConfigError):
        gauss_hermite(order)


def test_largest_order_has_usable_weights():
    rule = gauss_hermite(MAX_ORDER)
    assert np.all(rule.weights > 0.0)
    assert np.sum(np.exp(rule.log_weights)) == pytest.approx(1.0, rel=1e-8)


def test_check_finite_names_first_bad_index():
    check_finite(np.array([1.0, 2.0]), "values")
    with pytest.raises(ChannelOverflowError) as excinfo:
        check_finite(np.array([1.0, np.inf, np.nan]), "values")
    assert excinfo.value.index == 1
