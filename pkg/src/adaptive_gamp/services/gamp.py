"""
Adaptive GAMP main loop.

One call to ``gamp_iterate`` is one pass of the output-node update followed
by the input-node update:

    tau_p = ||A||_F^2 tau_x / m
    p     = A x_hat - s tau_p
    lambda_z <- H_z(p, y, tau_p)
    z_hat = G_z(p, y, tau_p),  s = G_s(p, y, tau_p)
    tau_s = -(1/m) sum_i dG_s/dp_i
    1/tau_r = ||A||_F^2 tau_s / n
    r     = x_hat + tau_r A^T s
    lambda_x <- H_x(r, tau_r)
    x_hat = G_x(r, tau_r),  tau_x = (tau_r/n) sum_j dG_x/dr_j
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from adaptive_gamp.errors import ConfigError, DivergenceError
from adaptive_gamp.logging_config import get_logger
from adaptive_gamp.services.adaptation import (
    AdaptationPlan,
    EmNoiseStrategy,
    MlOutputStrategy,
    OracleStrategy,
    adapt_input,
    adapt_output,
    initial_output_params,
)
from adaptive_gamp.services.channels import (
    InputChannel,
    OutputChannel,
    input_channel_for,
    output_channel_for,
)
from adaptive_gamp.services.model import (
    AwgnParams,
    InputParams,
    OutputParams,
    PoissonLnpParams,
    ProblemInstance,
)
from adaptive_gamp.utils.validation import sanitize_count, sanitize_tolerance

logger = get_logger(__name__)

STEP_ORDER = (
    "tau_p",
    "p",
    "lambda_z",
    "z_hat",
    "s",
    "tau_s",
    "tau_r",
    "r",
    "lambda_x",
    "x_hat",
    "tau_x",
)


@dataclass(frozen=True)
class GampConfig:
    max_iters: int = 200
    stop_tol: float = 1e-8
    variance_floor: float = 1e-12
    adaptation: AdaptationPlan = field(default_factory=AdaptationPlan)
    record_trajectory: bool = False
    #: 1.0 disables damping; smaller values blend s and x_hat with their previous values
    damping: float = 1.0

    def __post_init__(self) -> None:
        sanitize_count(self.max_iters, "max_iters")
        sanitize_tolerance(self.stop_tol, "stop_tol", allow_infinite=True)
        if not self.variance_floor > 0.0:
            raise ConfigError("variance_floor must be > 0")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class GampState:
    x_hat: np.ndarray
    tau_x: float
    s: np.ndarray
    p: np.ndarray
    tau_p: float
    r: np.ndarray
    tau_r: float
    z_hat: np.ndarray
    lambda_x_hat: InputParams
    lambda_z_hat: OutputParams
    iter: int = 0


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    tau_p: float
    tau_r: float
    tau_x: float
    rho_hat: float
    sigma_x_sq_hat: float
    lambda_z_hat: tuple[float, ...]
    mse: float
    rel_change: float
    steps: tuple[str, ...] = ()

    def as_row(self) -> dict[str, float]:
        row: dict[str, float] = {
            "iter": self.iter,
            "tau_p": self.tau_p,
            "tau_r": self.tau_r,
            "tau_x": self.tau_x,
            "rho_hat": self.rho_hat,
            "sigma_x_sq_hat": self.sigma_x_sq_hat,
        }
        for k, value in enumerate(self.lambda_z_hat):
            row[f"lambda_z_hat_{k}"] = value
        row["mse"] = self.mse
        row["mse_db"] = mse_to_db(self.mse)
        return row


@dataclass(frozen=True, eq=False)
class GampResult:
    final: GampState
    trajectory: tuple[IterationRecord, ...]
    mse: float
    iterations: int
    converged: bool


class MeasurementOperator:
    """Dense A with its squared Frobenius norm computed once."""

    def __init__(self, a_matrix: np.ndarray) -> None:
        self.matrix = np.asarray(a_matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ConfigError(f"A must be a matrix, got shape {self.matrix.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @cached_property
    def frob_sq(self) -> float:
        return float(np.sum(self.matrix**2))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def adjoint(self, s: np.ndarray) -> np.ndarray:
        return self.matrix.T @ s


def mse_to_db(mse: float) -> float:
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(mse)) if mse >= 0 else float("nan")


def output_params_vector(params: OutputParams) -> tuple[float, ...]:
    return tuple(float(v) for v in params.as_vector())


def _as_operator(a_matrix: np.ndarray | MeasurementOperator) -> MeasurementOperator:
    return a_matrix if isinstance(a_matrix, MeasurementOperator) else MeasurementOperator(a_matrix)


def _require_finite(values: np.ndarray | float, step: str, iteration: int) -> None:
    if not np.all(np.isfinite(values)):
        raise DivergenceError("non-finite values", step=step, iteration=iteration)


def gamp_init(
    dims: tuple[int, int],
    initial_params: tuple[InputParams, OutputParams],
    config: GampConfig | None = None,
    input_ch: InputChannel | None = None,
) -> GampState:
    config = config or GampConfig()
    m, n = (sanitize_count(d, name) for d, name in zip(dims, ("m", "n")))
    lambda_x, lambda_z = initial_params
    input_ch = input_ch or input_channel_for(lambda_x)

    tau_x = max(lambda_x.prior_variance, config.variance_floor)
    return GampState(
        x_hat=np.full(n, input_ch.prior_mean(lambda_x)),
        tau_x=tau_x,
        s=np.zeros(m),
        p=np.zeros(m),
        tau_p=max(tau_x * n / m, config.variance_floor),
        r=np.zeros(n),
        tau_r=config.variance_floor,
        z_hat=np.zeros(m),
        lambda_x_hat=lambda_x,
        lambda_z_hat=lambda_z,
        iter=0,
    )


def gamp_iterate(
    state: GampState,
    a_matrix: np.ndarray | MeasurementOperator,
    y: np.ndarray,
    input_ch: InputChannel,
    output_ch: OutputChannel,
    config: GampConfig,
    step_log: list[str] | None = None,
) -> GampState:
    op = _as_operator(a_matrix)
    m, n = op.shape
    t = state.iter
    floor = config.variance_floor
    plan = config.adaptation
    adapting = plan.active(t)
    log = step_log if step_log is not None else []

    # output node update
    tau_p = max(op.frob_sq * state.tau_x / m, floor)
    _require_finite(tau_p, "tau_p", t)
    log.append("tau_p")

    p = op.forward(state.x_hat) - state.s * tau_p
    _require_finite(p, "p", t)
    log.append("p")

    lambda_z = state.lambda_z_hat
    if adapting:
        lambda_z = adapt_output(plan.output, p, y, tau_p, lambda_z, output_ch).params
    log.append("lambda_z")

    estimates = output_ch.estimate(p, y, tau_p, lambda_z)
    z_hat = estimates.gz
    _require_finite(z_hat, "z_hat", t)
    log.append("z_hat")

    s = estimates.gs
    if config.damping < 1.0:
        s = config.damping * s + (1.0 - config.damping) * state.s
    _require_finite(s, "s", t)
    log.append("s")

    tau_s = -float(np.mean(estimates.gs_deriv))
    _require_finite(tau_s, "tau_s", t)
    if tau_s < 0.0:
        raise DivergenceError(f"negative tau_s={tau_s:.3e}", step="tau_s", iteration=t)
    tau_s = max(tau_s, floor)
    log.append("tau_s")

    # input node update
    tau_r = max(n / (op.frob_sq * tau_s), floor)
    _require_finite(tau_r, "tau_r", t)
    log.append("tau_r")

    r = state.x_hat + tau_r * op.adjoint(s)
    _require_finite(r, "r", t)
    log.append("r")

    lambda_x = state.lambda_x_hat
    if adapting:
        lambda_x = adapt_input(plan.input, r, tau_r, lambda_x, input_ch).params
    log.append("lambda_x")

    posterior = input_ch.posterior(r, tau_r, lambda_x)
    x_hat = posterior.mean
    if config.damping < 1.0:
        x_hat = config.damping * x_hat + (1.0 - config.damping) * state.x_hat
    _require_finite(x_hat, "x_hat", t)
    log.append("x_hat")

    # tau_r * dG_x/dr = var[X | r]
    tau_x = max(float(np.mean(posterior.var)), floor)
    _require_finite(tau_x, "tau_x", t)
    log.append("tau_x")

    return GampState(
        x_hat=x_hat,
        tau_x=tau_x,
        s=s,
        p=p,
        tau_p=tau_p,
        r=r,
        tau_r=tau_r,
        z_hat=z_hat,
        lambda_x_hat=lambda_x,
        lambda_z_hat=lambda_z,
        iter=t + 1,
    )


def default_initial_params(
    instance: ProblemInstance, plan: AdaptationPlan
) -> tuple[InputParams, OutputParams]:
    """
    Starting lambda for a run: the truth for oracle-adapted sides, otherwise
    rho = 0.5 with sigma_x^2 = var(y) m/n, and lambda_z near the box centre
    (LNP, see ``initial_output_params``) or half the observation variance (AWGN noise EM).
    """
    if isinstance(plan.input, OracleStrategy):
        lambda_x = instance.lambda_x_true
    else:
        sigma_x_sq = max(float(np.var(instance.y_obs)) * instance.m / instance.n, 1e-6)
        lambda_x = InputParams(rho=0.5, sigma_x_sq=sigma_x_sq)

    truth_z = instance.lambda_z_true
    if isinstance(plan.output, MlOutputStrategy) and isinstance(truth_z, PoissonLnpParams):
        lambda_z: OutputParams = initial_output_params(plan.output, truth_z.order)
    elif isinstance(plan.output, EmNoiseStrategy) and isinstance(truth_z, AwgnParams):
        lambda_z = AwgnParams(0.5 * float(np.var(instance.y_obs)))
    else:
        lambda_z = truth_z
    return lambda_x, lambda_z


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(old)), float(np.linalg.norm(new)), np.finfo(float).tiny)
    return float(np.linalg.norm(new - old)) / scale


def gamp_run(
    instance: ProblemInstance,
    config: GampConfig,
    initial_params: tuple[InputParams, OutputParams] | None = None,
    input_ch: InputChannel | None = None,
    output_ch: OutputChannel | None = None,
    on_iteration: Callable[[GampState], None] | None = None,
) -> GampResult:
    """Iterate until the relative change of x_hat drops below stop_tol or max_iters."""
    initial_params = initial_params or default_initial_params(instance, config.adaptation)
    input_ch = input_ch or input_channel_for(instance.lambda_x_true)
    output_ch = output_ch or output_channel_for(instance.lambda_z_true)
    op = MeasurementOperator(instance.a_matrix)

    state = gamp_init((instance.m, instance.n), initial_params, config, input_ch)
    trajectory: list[IterationRecord] = []
    converged = False

    for _ in range(config.max_iters):
        steps: list[str] = []
        new_state = gamp_iterate(state, op, instance.y_obs, input_ch, output_ch, config, steps)
        change = _relative_change(new_state.x_hat, state.x_hat)
        mse = float(np.mean((new_state.x_hat - instance.x_true) ** 2))

        if config.record_trajectory:
            trajectory.append(
                IterationRecord(
                    iter=new_state.iter,
                    tau_p=new_state.tau_p,
                    tau_r=new_state.tau_r,
                    tau_x=new_state.tau_x,
                    rho_hat=new_state.lambda_x_hat.rho,
                    sigma_x_sq_hat=new_state.lambda_x_hat.sigma_x_sq,
                    lambda_z_hat=output_params_vector(new_state.lambda_z_hat),
                    mse=mse,
                    rel_change=change,
                    steps=tuple(steps),
                )
            )
        logger.debug("gamp iteration", iter=new_state.iter, mse=mse, rel_change=change)
        if on_iteration is not None:
            on_iteration(new_state)

        state = new_state
        if change < config.stop_tol:
            converged = True
            break

    mse = float(np.mean((state.x_hat - instance.x_true) ** 2))
    return GampResult(
        final=state,
        trajectory=tuple(trajectory),
        mse=mse,
        iterations=state.iter,
        converged=converged,
    )


def with_adaptation(config: GampConfig, plan: AdaptationPlan) -> GampConfig:
    return replace(config, adaptation=plan)
