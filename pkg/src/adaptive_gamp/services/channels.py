"""
Sum-product scalar estimation functions.

Input side: G_x(r, tau_r) = E[X | R = r] with R = X + N(0, tau_r).
Output side: G_z(p, y, tau_p) = E[Z | P = p, Y = y] with Z = P + N(0, tau_p),
G_s = (G_z - p) / tau_p and
    -dG_s/dp = (1 - var[Z | p, y] / tau_p) / tau_p.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.special import expit, gammaln, logsumexp

from adaptive_gamp.errors import DegenerateChannelError, DomainError
from adaptive_gamp.services.model import (
    AwgnParams,
    InputParams,
    OutputParams,
    PoissonLnpParams,
    apply_output_channel,
    generate_gauss_bernoulli,
    lnp_basis,
    lnp_log_rate,
)
from adaptive_gamp.services.quadrature import (
    LogLikelihood,
    LogLikelihoodDerivatives,
    QuadratureRule,
    check_finite,
    gauss_hermite,
)
from adaptive_gamp.utils.validation import sanitize_counts_vector

RELATIVE_VARIANCE_FLOOR = 1e-12


class SpikeSlabTerms(NamedTuple):
    nonzero_prob: np.ndarray
    slab_mean: np.ndarray
    slab_var: np.ndarray
    mean: np.ndarray
    var: np.ndarray


class OutputEstimates(NamedTuple):
    gz: np.ndarray
    gs: np.ndarray
    gs_deriv: np.ndarray
    z_var: np.ndarray


def _positive_variance(value: float, field: str) -> float:
    value = float(value)
    if not value > 0.0 or not np.isfinite(value):
        raise DomainError(f"{field} must be a finite positive variance, got {value}")
    return value


def _log_normal(x: np.ndarray, var: float) -> np.ndarray:
    return stats.norm.logpdf(x, scale=np.sqrt(var))


# ---------------------------------------------------------------------------
# Gauss-Bernoulli input channel
# ---------------------------------------------------------------------------


def spike_slab_terms(r: np.ndarray, tau_r: float, params: InputParams) -> SpikeSlabTerms:
    tau_r = _positive_variance(tau_r, "tau_r")
    r = np.asarray(r, dtype=np.float64)
    rho, sigma_x_sq = params.rho, params.sigma_x_sq

    slab_total = sigma_x_sq + tau_r
    with np.errstate(divide="ignore"):
        log_odds = (
            np.log(rho)
            - np.log1p(-rho)
            + _log_normal(r, slab_total)
            - _log_normal(r, tau_r)
        )
    nonzero_prob = expit(log_odds)

    slab_mean = r * (sigma_x_sq / slab_total)
    slab_var = np.full_like(r, sigma_x_sq * tau_r / slab_total)
    mean = nonzero_prob * slab_mean
    # pi*v + pi*(1-pi)*m^2 is E[X^2|r] - mean^2 without the cancellation
    var = nonzero_prob * slab_var + nonzero_prob * (1.0 - nonzero_prob) * slab_mean**2
    var = np.maximum(var, RELATIVE_VARIANCE_FLOOR * params.prior_variance)
    return SpikeSlabTerms(nonzero_prob, slab_mean, slab_var, mean, var)


def gauss_bernoulli_posterior(
    r: np.ndarray, tau_r: float, params: InputParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact spike-slab posterior (mean, var, nonzero_prob) under R = X + N(0, tau_r)."""
    terms = spike_slab_terms(r, tau_r, params)
    return terms.mean, terms.var, terms.nonzero_prob


def input_log_marginal(r: np.ndarray, tau_r: float, params: InputParams) -> np.ndarray:
    """log[rho N(r; 0, sigma_x^2 + tau_r) + (1 - rho) N(r; 0, tau_r)]."""
    tau_r = _positive_variance(tau_r, "tau_r")
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_slab = np.log(params.rho) + _log_normal(r, params.sigma_x_sq + tau_r)
        log_spike = np.log1p(-params.rho) + _log_normal(r, tau_r)
    return np.logaddexp(log_slab, log_spike)


class InputChannel(ABC):
    """Prior family P_X(. | lambda_x) observed through an AWGN channel."""

    #: per-parameter (lower, upper) bounds of Lambda_x
    param_box: tuple[tuple[float, float], ...]

    @abstractmethod
    def posterior(self, r: np.ndarray, tau_r: float, params: InputParams) -> SpikeSlabTerms: ...

    @abstractmethod
    def log_marginal(self, r: np.ndarray, tau_r: float, params: InputParams) -> np.ndarray: ...

    @abstractmethod
    def sample(self, size: int, params: InputParams, seed: int) -> np.ndarray: ...

    def posterior_mean(self, r: np.ndarray, tau_r: float, params: InputParams) -> np.ndarray:
        return self.posterior(r, tau_r, params).mean

    def posterior_var(self, r: np.ndarray, tau_r: float, params: InputParams) -> np.ndarray:
        return self.posterior(r, tau_r, params).var

    def prior_mean(self, params: InputParams) -> float:
        return 0.0


class GaussBernoulliInput(InputChannel):
    param_box = ((0.0, 1.0), (0.0, np.inf))

    def posterior(self, r: np.ndarray, tau_r: float, params: InputParams) -> SpikeSlabTerms:
        return spike_slab_terms(r, tau_r, params)

    def log_marginal(self, r: np.ndarray, tau_r: float, params: InputParams) -> np.ndarray:
        return input_log_marginal(r, tau_r, params)

    def sample(self, size: int, params: InputParams, seed: int) -> np.ndarray:
        return generate_gauss_bernoulli(size, params, seed)


# ---------------------------------------------------------------------------
# Output channels
# ---------------------------------------------------------------------------


def awgn_output(
    p: np.ndarray, y: np.ndarray, tau_p: float, sigma_sq: float
) -> OutputEstimates:
    sigma_sq = float(sigma_sq)
    if not sigma_sq >= 0.0 or not np.isfinite(sigma_sq):
        raise DomainError(f"sigma_sq must be a finite nonnegative variance, got {sigma_sq}")
    if float(tau_p) == 0.0 and sigma_sq == 0.0:
        raise DegenerateChannelError("tau_p + sigma_sq must be positive")
    tau_p = _positive_variance(tau_p, "tau_p")
    total = tau_p + sigma_sq

    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gz = (sigma_sq / total) * p + (tau_p / total) * y
    gs = (y - p) / total
    gs_deriv = np.full_like(gs, -1.0 / total)
    z_var = np.full_like(gs, tau_p * sigma_sq / total)
    return OutputEstimates(gz, gs, gs_deriv, z_var)


def quadrature_output(
    p: np.ndarray,
    tau_p: float,
    log_likelihood: LogLikelihood,
    quad: QuadratureRule,
    derivatives: LogLikelihoodDerivatives | None = None,
) -> OutputEstimates:
    """Generic sum-product output step for any likelihood of z, by mode-centred quadrature."""
    tau_p = _positive_variance(tau_p, "tau_p")
    p = np.asarray(p, dtype=np.float64)
    gz, z_var, _ = quad.laplace_moments(p, np.full_like(p, tau_p), log_likelihood, derivatives)
    check_finite(gz, "posterior mean of Z")
    z_var = np.clip(z_var, RELATIVE_VARIANCE_FLOOR * tau_p, tau_p)
    gs = (gz - p) / tau_p
    gs_deriv = -(1.0 - z_var / tau_p) / tau_p
    return OutputEstimates(gz, gs, gs_deriv, z_var)


def poisson_log_likelihood(y: np.ndarray, lambda_z: np.ndarray) -> LogLikelihood:
    """Returns z -> log Poisson(y; f(z)), broadcasting y over the trailing node axis."""
    y = np.asarray(y, dtype=np.float64)
    log_factorial = gammaln(y + 1.0)

    def log_likelihood(z: np.ndarray) -> np.ndarray:
        log_rate = lnp_log_rate(z, lambda_z)
        with np.errstate(over="ignore", invalid="ignore"):
            return y[..., None] * log_rate - np.exp(log_rate) - log_factorial[..., None]

    return log_likelihood


def poisson_log_likelihood_derivatives(y: np.ndarray, lambda_z: np.ndarray) -> LogLikelihoodDerivatives:
    """
    z -> first and second z-derivatives of log Poisson(y; f(z)).

    With l(z) = sum_k lambda_k u^k and u = sigmoid(z):
    l' = sum_k k lambda_k u^k (1 - u) and
    l'' = sum_k k lambda_k u^k (1 - u) (k (1 - u) - u).
    """
    y = np.asarray(y, dtype=np.float64)
    lambda_z = np.asarray(lambda_z, dtype=np.float64)
    k = np.arange(lambda_z.size, dtype=np.float64)

    def derivatives(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = expit(np.asarray(z, dtype=np.float64))[..., None]
        powers = np.power(u, k)
        first_terms = k * lambda_z * powers * (1.0 - u)
        log_rate = powers @ lambda_z
        first = np.sum(first_terms, axis=-1)
        second = np.sum(first_terms * (k * (1.0 - u) - u), axis=-1)
        with np.errstate(over="ignore", invalid="ignore"):
            rate = np.exp(log_rate)
            residual = y[..., None] - rate
            return residual * first, residual * second - rate * first**2

    return derivatives


def poisson_lnp_output(
    p: np.ndarray,
    y: np.ndarray,
    tau_p: float,
    lambda_z: np.ndarray,
    quad: QuadratureRule,
) -> OutputEstimates:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise DomainError("Poisson observations must be nonnegative")
    return quadrature_output(
        p,
        tau_p,
        poisson_log_likelihood(y, lambda_z),
        quad,
        poisson_log_likelihood_derivatives(y, lambda_z),
    )


def output_log_marginal(
    y: np.ndarray,
    var_z: float,
    lambda_z: np.ndarray,
    quad: QuadratureRule,
    with_grad: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """
    log p_Y(y) = log E[Poisson(y; f(Z))], Z ~ N(0, var_z), per sample.

    With ``with_grad`` also returns d/d lambda_z of each term, shape (len(y), r):
    the posterior expectation of (y - f(z)) psi(z). Nodes are centred per
    distinct count.
    """
    var_z = _positive_variance(var_z, "var_z")
    y = np.asarray(y, dtype=np.float64)
    lambda_z = np.asarray(lambda_z, dtype=np.float64)
    counts, inverse = np.unique(y, return_inverse=True)

    z, log_w = quad.laplace_nodes(
        np.zeros_like(counts),
        var_z,
        poisson_log_likelihood(counts, lambda_z),
        poisson_log_likelihood_derivatives(counts, lambda_z),
    )
    psi = lnp_basis(z, lambda_z.size)
    log_rate = psi @ lambda_z
    with np.errstate(over="ignore"):
        rate = np.exp(log_rate)
    check_finite(rate, "Poisson rate at quadrature node")

    log_terms = log_w + counts[:, None] * log_rate - rate - gammaln(counts + 1.0)[:, None]
    log_p = logsumexp(log_terms, axis=1)
    check_finite(log_p, "output log-marginal")
    if not with_grad:
        return log_p[inverse]

    posterior = np.exp(log_terms - log_p[:, None])
    residual = counts[:, None] - rate
    grad = np.einsum("uk,uk,ukr->ur", posterior, residual, psi)
    return log_p[inverse], grad[inverse]


class OutputChannel(ABC):
    """Componentwise channel P_{Y|Z}(. | z, lambda_z)."""

    discrete: bool = False

    @abstractmethod
    def estimate(
        self, p: np.ndarray, y: np.ndarray, tau_p: float, params: OutputParams
    ) -> OutputEstimates: ...

    @abstractmethod
    def log_py_given_p(
        self, p: np.ndarray, y: np.ndarray, tau_p: float, params: OutputParams
    ) -> np.ndarray: ...

    @abstractmethod
    def log_py_marginal(self, y: np.ndarray, var_z: float, params: OutputParams) -> np.ndarray: ...

    def gz(self, p, y, tau_p, params) -> np.ndarray:
        return self.estimate(p, y, tau_p, params).gz

    def gs(self, p, y, tau_p, params) -> np.ndarray:
        return self.estimate(p, y, tau_p, params).gs

    def gs_deriv(self, p, y, tau_p, params) -> np.ndarray:
        return self.estimate(p, y, tau_p, params).gs_deriv

    def sample(self, z: np.ndarray, params: OutputParams, seed: int) -> tuple[np.ndarray, np.ndarray]:
        return apply_output_channel(z, params, seed)

    @abstractmethod
    def disturbance(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Standardized disturbance draws w feeding y = h(z, w)."""

    @abstractmethod
    def observe(self, z: np.ndarray, w: np.ndarray, params: OutputParams) -> np.ndarray: ...


class AwgnOutput(OutputChannel):
    def estimate(self, p, y, tau_p, params: AwgnParams) -> OutputEstimates:
        return awgn_output(p, y, tau_p, params.sigma_sq)

    def log_py_given_p(self, p, y, tau_p, params: AwgnParams) -> np.ndarray:
        return _log_normal(np.asarray(y) - np.asarray(p), tau_p + params.sigma_sq)

    def log_py_marginal(self, y, var_z, params: AwgnParams) -> np.ndarray:
        return _log_normal(np.asarray(y), var_z + params.sigma_sq)

    def disturbance(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(size)

    def observe(self, z, w, params: AwgnParams) -> np.ndarray:
        return np.asarray(z) + np.sqrt(params.sigma_sq) * np.asarray(w)


class PoissonLnpOutput(OutputChannel):
    discrete = True

    def __init__(self, quad: QuadratureRule | None = None) -> None:
        self.quad = quad or gauss_hermite()

    def estimate(self, p, y, tau_p, params: PoissonLnpParams) -> OutputEstimates:
        return poisson_lnp_output(p, y, tau_p, params.as_vector(), self.quad)

    def log_py_given_p(self, p, y, tau_p, params: PoissonLnpParams) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        log_likelihood = poisson_log_likelihood(np.asarray(y), params.as_vector())
        y = np.asarray(y, dtype=np.float64)
        _, _, log_evidence = self.quad.laplace_moments(
            p,
            np.full_like(p, _positive_variance(tau_p, "tau_p")),
            log_likelihood,
            poisson_log_likelihood_derivatives(y, params.as_vector()),
        )
        return log_evidence

    def log_py_marginal(self, y, var_z, params: PoissonLnpParams) -> np.ndarray:
        y = sanitize_counts_vector(y, "y")
        return output_log_marginal(y, var_z, params.as_vector(), self.quad)

    def disturbance(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random(size)

    def observe(self, z, w, params: PoissonLnpParams) -> np.ndarray:
        with np.errstate(over="ignore"):
            rate = np.exp(lnp_log_rate(np.asarray(z), params.as_vector()))
        check_finite(rate, "Poisson rate")
        return np.maximum(stats.poisson.ppf(w, rate), 0.0)


def input_channel_for(params: InputParams) -> InputChannel:
    return GaussBernoulliInput()


def output_channel_for(params: OutputParams, quad: QuadratureRule | None = None) -> OutputChannel:
    if isinstance(params, AwgnParams):
        return AwgnOutput()
    return PoissonLnpOutput(quad)
