"""
Scalar state evolution for sum-product adaptive GAMP.

Each step maps (tau_x, K_x) to the next pair through one output half

    tau_p = beta tau_x,  K_p = beta K_x,  (Z, P) ~ N(0, K_p),  Y = h(Z, W)
    lambda_z <- H_z(P, Y, tau_p),  1/tau_r = -E[dG_s/dp]

and one input half

    R = X + N(0, tau_r),  lambda_x <- H_x(R, tau_r)
    tau_x = E[var(X | R)],  K_x = cov(X, X_hat)

Expectations are seeded Monte Carlo averages. The same draws are reused at
every iteration, so trajectories are smooth in t and deterministic given
the seed. The adaptation functionals are evaluated by running the engine's
own adaptation code on the sampled populations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from adaptive_gamp.errors import ConfigError, SeDivergenceError
from adaptive_gamp.logging_config import get_logger
from adaptive_gamp.services.adaptation import AdaptationPlan, adapt_input, adapt_output
from adaptive_gamp.services.channels import (
    InputChannel,
    OutputChannel,
    input_channel_for,
    output_channel_for,
)
from adaptive_gamp.services.gamp import mse_to_db, output_params_vector
from adaptive_gamp.services.model import InputParams, OutputParams, derive_seeds
from adaptive_gamp.utils.validation import sanitize_count, sanitize_seed

logger = get_logger(__name__)

MIN_SAMPLES = 1000
EVAL_VARIANCE_FLOOR = 1e-12
PSD_TOLERANCE = 1e-10
FIXED_POINT_RTOL = 1e-4
FIXED_POINT_PATIENCE = 3


@dataclass(frozen=True)
class MonteCarloConfig:
    samples: int = 100_000
    seed: int = 0
    #: also evaluate xi_r and alpha_r through their general (non sum-product) form
    check_general: bool = False

    def __post_init__(self) -> None:
        if int(self.samples) < MIN_SAMPLES:
            raise ConfigError(f"Monte Carlo sample count must be >= {MIN_SAMPLES}, got {self.samples}")
        sanitize_seed(self.seed)


@dataclass(frozen=True)
class SeProblem:
    lambda_x_true: InputParams
    lambda_z_true: OutputParams
    beta: float

    def __post_init__(self) -> None:
        if not self.beta > 0.0 or not np.isfinite(self.beta):
            raise ConfigError(f"beta must be a finite positive ratio, got {self.beta}")

    @property
    def tau_x0(self) -> float:
        return self.lambda_x_true.prior_variance


class GeneralTerms(NamedTuple):
    xi_r: float
    alpha_r: float


@dataclass(frozen=True, eq=False)
class SeState:
    tau_x_bar: float
    k_x: np.ndarray
    tau_p_bar: float
    k_p: np.ndarray
    tau_r_bar: float
    xi_r: float
    alpha_r: float
    lambda_x_bar: InputParams
    lambda_z_bar: OutputParams | None
    iter: int = 0
    general: GeneralTerms | None = None

    @property
    def mse(self) -> float:
        """E[(X - X_hat)^2] as the (1,1) - 2(1,2) + (2,2) contraction of K_x."""
        k = self.k_x
        return max(float(k[0, 0] - 2.0 * k[0, 1] + k[1, 1]), 0.0)

    def as_row(self) -> dict[str, float]:
        row: dict[str, float] = {
            "iter": self.iter,
            "tau_p": self.tau_p_bar,
            "tau_r": self.tau_r_bar,
            "tau_x": self.tau_x_bar,
            "rho_hat": self.lambda_x_bar.rho,
            "sigma_x_sq_hat": self.lambda_x_bar.sigma_x_sq,
        }
        if self.lambda_z_bar is not None:
            for k, value in enumerate(output_params_vector(self.lambda_z_bar)):
                row[f"lambda_z_hat_{k}"] = value
        row["mse"] = self.mse
        row["mse_db"] = mse_to_db(self.mse)
        row["xi_r"] = self.xi_r
        row["alpha_r"] = self.alpha_r
        return row


@dataclass(frozen=True, eq=False)
class SeResult:
    states: tuple[SeState, ...]
    converged: bool = False

    @property
    def mse(self) -> tuple[float, ...]:
        return tuple(state.mse for state in self.states[1:])

    @property
    def final(self) -> SeState:
        return self.states[-1]


class _Draws(NamedTuple):
    gauss_zp: np.ndarray
    disturbance: np.ndarray
    x: np.ndarray
    noise_r: np.ndarray


def _common_draws(
    mc: MonteCarloConfig,
    lambda_x_true: InputParams,
    input_ch: InputChannel,
    output_ch: OutputChannel,
) -> _Draws:
    zp_seed, w_seed, x_seed, r_seed = derive_seeds(mc.seed, 4)
    return _Draws(
        gauss_zp=np.random.Generator(np.random.PCG64(zp_seed)).standard_normal((mc.samples, 2)),
        disturbance=output_ch.disturbance(mc.samples, np.random.Generator(np.random.PCG64(w_seed))),
        x=input_ch.sample(mc.samples, lambda_x_true, x_seed),
        noise_r=np.random.Generator(np.random.PCG64(r_seed)).standard_normal(mc.samples),
    )


def _psd_sqrt(cov: np.ndarray, what: str, iteration: int) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(vals))), np.finfo(float).tiny)
    if not np.all(np.isfinite(vals)) or vals.min() < -PSD_TOLERANCE * scale:
        raise SeDivergenceError(f"{what} is not positive semidefinite", step=what, iteration=iteration)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_zp(k_p: np.ndarray, gauss: np.ndarray, iteration: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Map standard normal pairs to (Z, P) ~ N(0, K_p)."""
    zp = gauss @ _psd_sqrt(k_p, "k_p", iteration).T
    return zp[:, 0], zp[:, 1]


def se_init(
    lambda_x_true: InputParams,
    beta: float,
    tau_x0: float | None = None,
    *,
    lambda_z: OutputParams | None = None,
    lambda_x_start: InputParams | None = None,
) -> SeState:
    """K_x^0 = cov(X, 0) for the zero-mean start X_hat^0 = 0."""
    if not beta > 0.0:
        raise ConfigError(f"beta must be > 0, got {beta}")
    tau_x0 = lambda_x_true.prior_variance if tau_x0 is None else float(tau_x0)
    k_x = np.array([[tau_x0, 0.0], [0.0, 0.0]])
    return SeState(
        tau_x_bar=tau_x0,
        k_x=k_x,
        tau_p_bar=beta * tau_x0,
        k_p=beta * k_x,
        tau_r_bar=np.inf,
        xi_r=np.inf,
        alpha_r=1.0,
        lambda_x_bar=lambda_x_start or lambda_x_true,
        lambda_z_bar=lambda_z,
        iter=0,
    )


def _general_terms(
    z: np.ndarray,
    p: np.ndarray,
    w: np.ndarray,
    k_p: np.ndarray,
    tau_p: float,
    tau_r: float,
    lambda_z_true: OutputParams,
    lambda_z_bar: OutputParams,
    output_ch: OutputChannel,
    gs: np.ndarray,
    gs_deriv: np.ndarray,
) -> GeneralTerms:
    """xi_r = tau_r^2 E[G_s^2] and alpha_r = tau_r E[dG_s/dz], the latter by
    central differences through y = h(z, w) for continuous channels and by
    Gaussian integration by parts for discrete ones."""
    xi_r = tau_r**2 * float(np.mean(gs**2))
    k_zz = float(k_p[0, 0])
    if k_zz <= 0.0:
        return GeneralTerms(xi_r, float("nan"))

    if output_ch.discrete:
        # E[Z g] = K_zz E[d_z g] + K_zp E[d_p g]
        d_z = (float(np.mean(z * gs)) - float(k_p[0, 1]) * float(np.mean(gs_deriv))) / k_zz
    else:
        eps = 1e-6 * max(1.0, np.sqrt(k_zz))
        y_hi = output_ch.observe(z + eps, w, lambda_z_true)
        y_lo = output_ch.observe(z - eps, w, lambda_z_true)
        g_hi = output_ch.gs(p, y_hi, tau_p, lambda_z_bar)
        g_lo = output_ch.gs(p, y_lo, tau_p, lambda_z_bar)
        d_z = float(np.mean((g_hi - g_lo) / (2.0 * eps)))
    return GeneralTerms(xi_r, tau_r * d_z)


def se_step(
    state: SeState,
    problem: SeProblem,
    input_ch: InputChannel,
    output_ch: OutputChannel,
    adaptation: AdaptationPlan,
    mc: MonteCarloConfig,
) -> SeState:
    t = state.iter
    draws = _common_draws(mc, problem.lambda_x_true, input_ch, output_ch)

    # output half
    tau_p = problem.beta * state.tau_x_bar
    k_p = problem.beta * state.k_x
    tau_p_eval = max(tau_p, EVAL_VARIANCE_FLOOR)
    z, p = sample_zp(k_p, draws.gauss_zp, t)
    y = output_ch.observe(z, draws.disturbance, problem.lambda_z_true)

    lambda_z = state.lambda_z_bar or problem.lambda_z_true
    if adaptation.active(t):
        lambda_z = adapt_output(adaptation.output, p, y, tau_p_eval, lambda_z, output_ch).params

    estimates = output_ch.estimate(p, y, tau_p_eval, lambda_z)
    mean_deriv = float(np.mean(estimates.gs_deriv))
    if not np.isfinite(mean_deriv) or mean_deriv >= 0.0:
        raise SeDivergenceError(
            f"E[dG_s/dp] = {mean_deriv:.3e} is not negative", step="tau_r", iteration=t
        )
    tau_r = -1.0 / mean_deriv

    general = None
    if mc.check_general:
        general = _general_terms(
            z, p, draws.disturbance, k_p, tau_p_eval, tau_r,
            problem.lambda_z_true, lambda_z, output_ch, estimates.gs, estimates.gs_deriv,
        )

    # input half
    r = draws.x + np.sqrt(tau_r) * draws.noise_r
    lambda_x = state.lambda_x_bar
    if adaptation.active(t):
        lambda_x = adapt_input(adaptation.input, r, tau_r, lambda_x, input_ch).params

    posterior = input_ch.posterior(r, tau_r, lambda_x)
    x_hat = posterior.mean
    tau_x = float(np.mean(posterior.var))
    x = draws.x
    k_x = np.array(
        [
            [np.mean(x * x), np.mean(x * x_hat)],
            [np.mean(x * x_hat), np.mean(x_hat * x_hat)],
        ]
    )
    if not (np.isfinite(tau_x) and np.all(np.isfinite(k_x))):
        raise SeDivergenceError("non-finite input-side moments", step="k_x", iteration=t)
    _psd_sqrt(k_x, "k_x", t)

    return SeState(
        tau_x_bar=tau_x,
        k_x=k_x,
        tau_p_bar=tau_p,
        k_p=k_p,
        tau_r_bar=tau_r,
        xi_r=tau_r,
        alpha_r=1.0,
        lambda_x_bar=lambda_x,
        lambda_z_bar=lambda_z,
        iter=t + 1,
        general=general,
    )


def se_run(
    problem: SeProblem,
    iterations: int,
    adaptation: AdaptationPlan | None = None,
    mc: MonteCarloConfig | None = None,
    input_ch: InputChannel | None = None,
    output_ch: OutputChannel | None = None,
    initial: SeState | None = None,
    detect_fixed_point: bool = False,
) -> SeResult:
    """
    Run ``iterations`` SE steps. With ``detect_fixed_point`` the loop stops
    early once the predicted MSE has moved by less than 1e-4 relative on
    three consecutive steps.
    """
    iterations = sanitize_count(iterations, "SE iterations")
    adaptation = adaptation or AdaptationPlan()
    mc = mc or MonteCarloConfig()
    input_ch = input_ch or input_channel_for(problem.lambda_x_true)
    output_ch = output_ch or output_channel_for(problem.lambda_z_true)
    state = initial or se_init(problem.lambda_x_true, problem.beta, lambda_z=problem.lambda_z_true)

    states = [state]
    calm = 0
    converged = False
    for _ in range(iterations):
        previous = state.mse
        state = se_step(state, problem, input_ch, output_ch, adaptation, mc)
        states.append(state)
        logger.debug("se iteration", iter=state.iter, tau_r=state.tau_r_bar, mse=state.mse)

        if detect_fixed_point:
            change = abs(state.mse - previous) / max(previous, np.finfo(float).tiny)
            calm = calm + 1 if change < FIXED_POINT_RTOL else 0
            if calm >= FIXED_POINT_PATIENCE:
                converged = True
                break

    return SeResult(states=tuple(states), converged=converged)


def sample_theta_x(
    lambda_x_true: InputParams,
    tau_r_bar: float,
    lambda_x_bar: InputParams,
    size: int,
    seed: int,
    input_ch: InputChannel | None = None,
) -> np.ndarray:
    """Draws of the limiting (X, R, X_hat) triple, shape (size, 3)."""
    input_ch = input_ch or input_channel_for(lambda_x_true)
    x_seed, r_seed = derive_seeds(seed, 2)
    x = input_ch.sample(size, lambda_x_true, x_seed)
    r = x + np.sqrt(tau_r_bar) * np.random.Generator(np.random.PCG64(r_seed)).standard_normal(size)
    x_hat = input_ch.posterior_mean(r, tau_r_bar, lambda_x_bar)
    return np.column_stack([x, r, x_hat])


def sample_theta_z(
    k_p: np.ndarray,
    lambda_z_true: OutputParams,
    size: int,
    seed: int,
    output_ch: OutputChannel | None = None,
) -> np.ndarray:
    """Draws of the limiting (Z, P, Y) triple, shape (size, 3)."""
    output_ch = output_ch or output_channel_for(lambda_z_true)
    zp_seed, w_seed = derive_seeds(seed, 2)
    gauss = np.random.Generator(np.random.PCG64(zp_seed)).standard_normal((size, 2))
    z, p = sample_zp(np.asarray(k_p, dtype=np.float64), gauss)
    w = output_ch.disturbance(size, np.random.Generator(np.random.PCG64(w_seed)))
    y = output_ch.observe(z, w, lambda_z_true)
    return np.column_stack([z, p, y])
