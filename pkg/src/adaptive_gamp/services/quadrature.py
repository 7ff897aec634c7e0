"""
Gauss-Hermite quadrature for expectations under a Gaussian.

Weights follow the physicists' convention of ``numpy.polynomial.hermite``:
they integrate against exp(-t^2) and sum to sqrt(pi). An expectation under
N(mu, var) is therefore

    E[g(Z)] = pi^{-1/2} * sum_k w_k g(mu + sqrt(2 var) t_k)

and every accumulation below is carried out in the log domain.

Posterior integrals against a sharp likelihood (Poisson counts in the tens,
say) put almost all of their mass between two prior-centred nodes. For those
the rule is re-centred at the mode of prior x likelihood and scaled by its
curvature (adaptive Gauss-Hermite), which is exact for Gaussian posteriors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import logsumexp

from adaptive_gamp.errors import ChannelOverflowError, ConfigError
from adaptive_gamp.utils.validation import sanitize_count

DEFAULT_ORDER = 41
#: hermgauss weights underflow to zero past this order
MAX_ORDER = 200

MODE_MAX_STEPS = 60
MODE_MAX_HALVINGS = 40
MODE_TOL = 1e-10
#: curvature floor, as a fraction of the prior precision
MIN_CURVATURE = 0.25

LogLikelihood = Callable[[np.ndarray], np.ndarray]
#: z -> (d/dz, d^2/dz^2) of the log-likelihood
LogLikelihoodDerivatives = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def numeric_derivatives(log_likelihood: LogLikelihood) -> LogLikelihoodDerivatives:
    """Central differences, for likelihoods without closed-form derivatives."""

    def derivatives(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = 1e-4 * (1.0 + np.abs(z))
        mid, up, down = log_likelihood(z), log_likelihood(z + h), log_likelihood(z - h)
        return (up - down) / (2.0 * h), (up - 2.0 * mid + down) / h**2

    return derivatives


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def log_weights(self) -> np.ndarray:
        """log(w_k / sqrt(pi)); these sum (in linear space) to one."""
        return np.log(self.weights) - 0.5 * np.log(np.pi)

    def points(self, mean: np.ndarray | float, var: np.ndarray | float) -> np.ndarray:
        """Abscissae for N(mean, var), shape broadcast(mean, var) + (order,)."""
        mean = np.asarray(mean, dtype=np.float64)
        scale = np.sqrt(2.0 * np.asarray(var, dtype=np.float64))
        return mean[..., None] + scale[..., None] * self.nodes

    def laplace_nodes(
        self,
        mean: np.ndarray | float,
        var: np.ndarray | float,
        log_likelihood: LogLikelihood,
        derivatives: LogLikelihoodDerivatives | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        Nodes z and log-weights such that E[g(Z)] under N(mean, var) is
        sum_k exp(log_w_k) g(z_k) for g close to the likelihood's shape.

        The nodes sit at mode + sqrt(2 / c) t_k, with c the negative second
        derivative of log prior + log-likelihood at the mode.
        """
        mean, var = np.broadcast_arrays(
            np.asarray(mean, dtype=np.float64), np.asarray(var, dtype=np.float64)
        )
        derivatives = derivatives or numeric_derivatives(log_likelihood)
        mode, curvature = self._mode(mean, var, log_likelihood, derivatives)

        scale = np.sqrt(2.0 / curvature)
        z = mode[..., None] + scale[..., None] * self.nodes
        log_prior = -0.5 * (z - mean[..., None]) ** 2 / var[..., None] - 0.5 * np.log(
            2.0 * np.pi * var[..., None]
        )
        log_w = np.log(self.weights) + self.nodes**2 + np.log(scale)[..., None] + log_prior
        return z, log_w

    def laplace_moments(
        self,
        mean: np.ndarray | float,
        var: np.ndarray | float,
        log_likelihood: LogLikelihood,
        derivatives: LogLikelihoodDerivatives | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Moments of Z | data when Z ~ N(mean, var) a priori.

        Returns (posterior mean, posterior variance, log evidence), where the
        evidence is E[exp(log_likelihood(Z))] under the prior.
        """
        z, log_w = self.laplace_nodes(mean, var, log_likelihood, derivatives)
        return _moments(z, log_w + log_likelihood(z))

    def _mode(
        self,
        mean: np.ndarray,
        var: np.ndarray,
        log_likelihood: LogLikelihood,
        derivatives: LogLikelihoodDerivatives,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Damped Newton ascent on log prior + log-likelihood, one scalar per element."""

        def target(z: np.ndarray) -> np.ndarray:
            with np.errstate(invalid="ignore"):
                values = -0.5 * (z - mean) ** 2 / var + log_likelihood(z[..., None])[..., 0]
            return np.where(np.isnan(values), -np.inf, values)

        # start from the best prior-centred node
        grid = self.points(mean, var)
        with np.errstate(invalid="ignore"):
            grid_values = -0.5 * (grid - mean[..., None]) ** 2 / var[..., None] + log_likelihood(grid)
        grid_values = np.where(np.isnan(grid_values), -np.inf, grid_values)
        z = np.take_along_axis(grid, np.argmax(grid_values, axis=-1)[..., None], axis=-1)[..., 0]
        floor = MIN_CURVATURE / var

        for _ in range(MODE_MAX_STEPS):
            d1, d2 = (d[..., 0] for d in derivatives(z[..., None]))
            gradient = -(z - mean) / var + d1
            curvature = np.maximum(1.0 / var - d2, floor)
            step = np.where(np.isfinite(gradient), gradient / curvature, 0.0)

            current = target(z)
            accepted = np.zeros(z.shape, dtype=bool)
            for _ in range(MODE_MAX_HALVINGS):
                accepted = target(z + step) >= current
                if accepted.all():
                    break
                step = np.where(accepted, step, 0.5 * step)
            step = np.where(accepted, step, 0.0)
            z = z + step
            if np.all(np.abs(step) <= MODE_TOL * (1.0 + np.abs(z))):
                break

        _, d2 = (d[..., 0] for d in derivatives(z[..., None]))
        curvature = np.maximum(1.0 / var - d2, floor)
        curvature = np.where(np.isfinite(curvature), curvature, 1.0 / var)
        return z, curvature


def _moments(z: np.ndarray, log_terms: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    log_evidence = logsumexp(log_terms, axis=-1)
    check_finite(log_evidence, "quadrature log-evidence")
    posterior = np.exp(log_terms - log_evidence[..., None])
    post_mean = np.sum(posterior * z, axis=-1)
    post_var = np.sum(posterior * (z - post_mean[..., None]) ** 2, axis=-1)
    return post_mean, post_var, log_evidence


def check_finite(values: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(np.ravel(values)))
    if bad.size:
        raise ChannelOverflowError(
            f"non-finite {what} at index {int(bad[0])}", index=int(bad[0])
        )


@lru_cache(maxsize=16)
def gauss_hermite(order: int = DEFAULT_ORDER) -> QuadratureRule:
    order = sanitize_count(order, "quadrature order")
    if order > MAX_ORDER:
        raise ConfigError(f"quadrature order must be <= {MAX_ORDER}, got {order}")
    nodes, weights = hermgauss(order)
    if not (np.all(np.isfinite(weights)) and np.all(weights > 0.0)):
        raise ConfigError(f"Gauss-Hermite weights underflow at order {order}")
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights, order=order)
