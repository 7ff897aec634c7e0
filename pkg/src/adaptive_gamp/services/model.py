"""
Shared data model and synthetic problem generation.

Random streams use numpy's ``Generator`` over the PCG64 bit generator
(numpy >= 1.17 stream definition). A ProblemInstance seed is expanded with
``SeedSequence(seed).generate_state(3, dtype=uint64)`` into independent seeds
for the matrix, the signal and the channel disturbance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy import stats
from scipy.special import expit

from adaptive_gamp.errors import ChannelOverflowError, ConfigError
from adaptive_gamp.logging_config import get_logger
from adaptive_gamp.utils.validation import (
    sanitize_count,
    sanitize_probability,
    sanitize_seed,
    sanitize_variance,
    sanitize_vector,
)

logger = get_logger(__name__)


@dataclass(frozen=True)
class InputParams:
    """Gauss-Bernoulli prior: zero w.p. 1 - rho, else N(0, sigma_x_sq)."""

    rho: float
    sigma_x_sq: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho", sanitize_probability(self.rho, "rho"))
        object.__setattr__(
            self, "sigma_x_sq", sanitize_variance(self.sigma_x_sq, "sigma_x_sq")
        )

    @property
    def prior_variance(self) -> float:
        return self.rho * self.sigma_x_sq

    def as_dict(self) -> dict[str, float]:
        return {"rho": self.rho, "sigma_x_sq": self.sigma_x_sq}


@dataclass(frozen=True)
class AwgnParams:
    sigma_sq: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "sigma_sq", sanitize_variance(self.sigma_sq, "sigma_sq", allow_zero=True)
        )

    def as_vector(self) -> np.ndarray:
        return np.array([self.sigma_sq])

    def as_dict(self) -> dict[str, object]:
        return {"kind": "awgn", "sigma_sq": self.sigma_sq}


@dataclass(frozen=True)
class PoissonLnpParams:
    """Linear-nonlinear-Poisson rate f(z) = exp(lambda_z . psi(z))."""

    lambda_z: tuple[float, ...]

    def __post_init__(self) -> None:
        coefficients = sanitize_vector(self.lambda_z, "lambda_z")
        object.__setattr__(self, "lambda_z", tuple(float(c) for c in coefficients))

    @property
    def order(self) -> int:
        return len(self.lambda_z)

    def as_vector(self) -> np.ndarray:
        return np.asarray(self.lambda_z, dtype=np.float64)

    def as_dict(self) -> dict[str, object]:
        return {"kind": "poisson_lnp", "lambda_z": list(self.lambda_z)}


OutputParams = Union[AwgnParams, PoissonLnpParams]


def output_params_from_dict(payload: dict) -> OutputParams:
    kind = payload.get("kind")
    if kind == "awgn":
        return AwgnParams(sigma_sq=payload["sigma_sq"])
    if kind == "poisson_lnp":
        return PoissonLnpParams(lambda_z=tuple(payload["lambda_z"]))
    raise ConfigError(f"unknown output channel kind {kind!r}")


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    a_matrix: np.ndarray
    x_true: np.ndarray
    z_true: np.ndarray
    w_noise: np.ndarray
    y_obs: np.ndarray
    lambda_x_true: InputParams
    lambda_z_true: OutputParams
    seed: int

    @property
    def m(self) -> int:
        return int(self.a_matrix.shape[0])

    @property
    def n(self) -> int:
        return int(self.a_matrix.shape[1])

    @property
    def beta(self) -> float:
        """Measurement ratio n/m."""
        return self.n / self.m


def lnp_basis(z: np.ndarray, order: int) -> np.ndarray:
    """psi(z) = (1, u, ..., u^(order-1)) with u the logistic sigmoid; shape z.shape + (order,)."""
    u = expit(np.asarray(z, dtype=np.float64))
    return np.power(u[..., None], np.arange(order))


def lnp_log_rate(z: np.ndarray, lambda_z: np.ndarray) -> np.ndarray:
    lambda_z = np.asarray(lambda_z, dtype=np.float64)
    return lnp_basis(z, lambda_z.size) @ lambda_z


def mirror_rate_polynomial(lambda_z: np.ndarray) -> np.ndarray:
    """
    Coefficients of u -> log f at 1 - u. Since sigmoid(-z) = 1 - sigmoid(z),
    the mirrored channel has the same p_Y under any zero-mean Gaussian Z.
    """
    lambda_z = np.asarray(lambda_z, dtype=np.float64)
    mirrored = Polynomial(lambda_z)(Polynomial([1.0, -1.0])).coef
    out = np.zeros(lambda_z.size)
    out[: min(mirrored.size, out.size)] = mirrored[: out.size]
    return out


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(sanitize_seed(seed)))


def derive_seeds(seed: int, count: int) -> list[int]:
    state = np.random.SeedSequence(sanitize_seed(seed)).generate_state(count, dtype=np.uint64)
    return [int(s) for s in state]


def generate_matrix(m: int, n: int, seed: int) -> np.ndarray:
    """Dense m x n matrix with i.i.d. N(0, 1/m) entries."""
    m = sanitize_count(m, "m")
    n = sanitize_count(n, "n")
    return _rng(seed).standard_normal((m, n)) * np.sqrt(1.0 / m)


def generate_gauss_bernoulli(n: int, params: InputParams, seed: int) -> np.ndarray:
    n = sanitize_count(n, "n")
    rng = _rng(seed)
    support = rng.random(n) < params.rho
    values = rng.standard_normal(n) * np.sqrt(params.sigma_x_sq)
    return np.where(support, values, 0.0)


def apply_output_channel(
    z: np.ndarray, params: OutputParams, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Pass z through the componentwise channel.

    Returns (y, w). For the AWGN channel w is the additive noise; for the
    Poisson channel w holds the uniform variates inverted through the
    Poisson CDF, so y_i = F^{-1}(w_i; f(z_i)).
    """
    z = sanitize_vector(z, "z")
    rng = _rng(seed)

    if isinstance(params, AwgnParams):
        w = rng.standard_normal(z.size) * np.sqrt(params.sigma_sq)
        return z + w, w

    with np.errstate(over="ignore"):
        rate = np.exp(lnp_log_rate(z, params.as_vector()))
    bad = np.flatnonzero(~np.isfinite(rate))
    if bad.size:
        raise ChannelOverflowError(
            f"Poisson rate overflow at index {int(bad[0])}", index=int(bad[0])
        )
    w = rng.random(z.size)
    y = np.maximum(stats.poisson.ppf(w, rate), 0.0)
    return y, w


def generate_instance(
    m: int,
    n: int,
    input_params: InputParams,
    output_params: OutputParams,
    seed: int,
) -> ProblemInstance:
    matrix_seed, signal_seed, channel_seed = derive_seeds(seed, 3)
    a_matrix = generate_matrix(m, n, matrix_seed)
    x_true = generate_gauss_bernoulli(n, input_params, signal_seed)
    z_true = a_matrix @ x_true
    y_obs, w_noise = apply_output_channel(z_true, output_params, channel_seed)

    logger.debug("instance generated", m=m, n=n, seed=seed, channel=type(output_params).__name__)
    return ProblemInstance(
        a_matrix=a_matrix,
        x_true=x_true,
        z_true=z_true,
        w_noise=w_noise,
        y_obs=y_obs,
        lambda_x_true=input_params,
        lambda_z_true=output_params,
        seed=seed,
    )
