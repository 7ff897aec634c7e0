"""
Adaptation functions H_x and H_z.

- ``OracleStrategy``: returns the configured parameters unchanged.
- ``EmInputStrategy``: spike-slab EM on r, run to convergence as a stand-in
  for maximizing (1/n) sum_j log p_R(r_j | lambda_x, tau_r).
- ``MlOutputStrategy``: box-constrained L-BFGS-B ascent on
  (1/m) sum_i log p_Y(y_i | lambda_z) for the LNP channel.
- ``EmNoiseStrategy``: EM on the AWGN noise variance.

Sums over samples are plain numpy reductions in index order, so results do
not depend on worker scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import optimize
from scipy.special import xlogy

from adaptive_gamp.errors import (
    AdaptationFailureError,
    ChannelOverflowError,
    ConfigError,
    ConvergenceError,
    DimensionError,
)
from adaptive_gamp.logging_config import get_logger
from adaptive_gamp.services.channels import (
    AwgnOutput,
    InputChannel,
    OutputChannel,
    PoissonLnpOutput,
    awgn_output,
    input_log_marginal,
    output_log_marginal,
    spike_slab_terms,
)
from adaptive_gamp.services.model import (
    AwgnParams,
    InputParams,
    OutputParams,
    PoissonLnpParams,
    mirror_rate_polynomial,
)
from adaptive_gamp.services.quadrature import QuadratureRule
from adaptive_gamp.utils.validation import (
    sanitize_count,
    sanitize_counts_vector,
    sanitize_tolerance,
    sanitize_vector,
)

logger = get_logger(__name__)

SIGMA_FLOOR = 1e-12
DEGENERATE_MASS = 1e-12
MONOTONE_SLACK = 1e-10
DEFAULT_BOX_HALF_WIDTH = 20.0
START_TILT = 1.0


@dataclass(frozen=True)
class OracleStrategy:
    kind: str = field(default="oracle", init=False)


@dataclass(frozen=True)
class EmInputStrategy:
    max_em_iters: int = 200
    tol: float = 1e-6
    kind: str = field(default="em_input", init=False)

    def __post_init__(self) -> None:
        sanitize_count(self.max_em_iters, "max_em_iters")
        if sanitize_tolerance(self.tol, "tol") == 0.0:
            raise ConfigError("EM tolerance must be > 0")


@dataclass(frozen=True)
class MlOutputStrategy:
    """
    Quasi-Newton ascent settings. ``max_ascent_iters = 0`` freezes lambda_z at
    the warm start. ``tol`` bounds the projected gradient and ``ftol`` the
    relative objective change at a stop. ``box`` defaults to [-20, 20] per
    coefficient.
    """

    max_ascent_iters: int = 500
    tol: float = 1e-8
    ftol: float = 1e-15
    box: tuple[tuple[float, float], ...] | None = None
    kind: str = field(default="ml_output", init=False)

    def __post_init__(self) -> None:
        sanitize_count(self.max_ascent_iters, "max_ascent_iters", minimum=0)
        if sanitize_tolerance(self.tol, "tol") == 0.0:
            raise ConfigError("ascent tolerance must be > 0")
        if sanitize_tolerance(self.ftol, "ftol") == 0.0:
            raise ConfigError("ascent ftol must be > 0")
        if self.box is not None:
            for lower, upper in self.box:
                if not (np.isfinite(lower) and np.isfinite(upper) and lower < upper):
                    raise ConfigError(f"invalid box bounds ({lower}, {upper})")

    def bounds(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        if self.box is None:
            half = DEFAULT_BOX_HALF_WIDTH
            return np.full(order, -half), np.full(order, half)
        if len(self.box) != order:
            raise ConfigError(f"box has {len(self.box)} bounds, lambda_z has {order}")
        lower, upper = zip(*self.box)
        return np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64)


@dataclass(frozen=True)
class EmNoiseStrategy:
    max_em_iters: int = 200
    tol: float = 1e-6
    kind: str = field(default="em_noise", init=False)

    def __post_init__(self) -> None:
        sanitize_count(self.max_em_iters, "max_em_iters")
        if sanitize_tolerance(self.tol, "tol") == 0.0:
            raise ConfigError("EM tolerance must be > 0")


InputStrategy = Union[OracleStrategy, EmInputStrategy]
OutputStrategy = Union[OracleStrategy, MlOutputStrategy, EmNoiseStrategy]
AdaptationStrategy = Union[OracleStrategy, EmInputStrategy, MlOutputStrategy, EmNoiseStrategy]


@dataclass(frozen=True)
class AdaptationPlan:
    """Which H_x / H_z to run and how often (every ``every``-th iteration)."""

    input: InputStrategy = field(default_factory=OracleStrategy)
    output: OutputStrategy = field(default_factory=OracleStrategy)
    every: int = 1

    def __post_init__(self) -> None:
        sanitize_count(self.every, "adaptation cadence")
        if not isinstance(self.input, (OracleStrategy, EmInputStrategy)):
            raise ConfigError(f"{self.input.kind} cannot adapt the input prior")
        if not isinstance(self.output, (OracleStrategy, MlOutputStrategy, EmNoiseStrategy)):
            raise ConfigError(f"{self.output.kind} cannot adapt the output channel")

    @property
    def is_oracle(self) -> bool:
        return isinstance(self.input, OracleStrategy) and isinstance(self.output, OracleStrategy)

    def active(self, iteration: int) -> bool:
        return iteration % self.every == 0


@dataclass(frozen=True)
class InputFit:
    params: InputParams
    iterations: int
    converged: bool
    degenerate: bool
    #: (1/n) sum_j log p_R(r_j | lambda, tau_r) before the first and after each EM step
    objective_trace: tuple[float, ...]
    params_trace: tuple[InputParams, ...]
    #: expected complete-data log-likelihood at the returned parameters
    em_objective: float


@dataclass(frozen=True)
class OutputFit:
    params: OutputParams
    iterations: int
    converged: bool
    objective_trace: tuple[float, ...]


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def input_objective(r: np.ndarray, tau_r: float, params: InputParams) -> float:
    return float(np.mean(input_log_marginal(r, tau_r, params)))


def output_objective(
    y: np.ndarray, var_z: float, params: PoissonLnpParams, quad: QuadratureRule
) -> float:
    return float(np.mean(output_log_marginal(y, var_z, params.as_vector(), quad)))


def em_complete_objective(r: np.ndarray, tau_r: float, params: InputParams) -> float:
    terms = spike_slab_terms(r, tau_r, params)
    pi = terms.nonzero_prob
    slab_second = terms.slab_var + terms.slab_mean**2
    per_sample = (
        xlogy(pi, params.rho)
        + xlogy(1.0 - pi, 1.0 - params.rho)
        - pi * (0.5 * np.log(2.0 * np.pi * params.sigma_x_sq) + slab_second / (2.0 * params.sigma_x_sq))
    )
    return float(np.mean(per_sample))


def _relative_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), np.finfo(float).tiny)


# ---------------------------------------------------------------------------
# H_x
# ---------------------------------------------------------------------------


def adapt_input_em(
    r: np.ndarray, tau_r: float, prev: InputParams, strategy: EmInputStrategy
) -> InputFit:
    r = sanitize_vector(r, "r")
    params = InputParams(rho=prev.rho, sigma_x_sq=max(prev.sigma_x_sq, SIGMA_FLOOR))
    objective = input_objective(r, tau_r, params)
    objectives = [objective]
    history = [params]
    converged = degenerate = False
    iterations = 0

    for iterations in range(1, strategy.max_em_iters + 1):
        terms = spike_slab_terms(r, tau_r, params)
        mass = float(np.sum(terms.nonzero_prob))
        if mass < DEGENERATE_MASS:
            params = InputParams(rho=0.0, sigma_x_sq=params.sigma_x_sq)
            degenerate = True
            history.append(params)
            objectives.append(input_objective(r, tau_r, params))
            logger.info("em fit degenerate", responsibility_mass=mass, iteration=iterations)
            break

        slab_second = float(np.sum(terms.nonzero_prob * (terms.slab_var + terms.slab_mean**2)))
        updated = InputParams(
            rho=min(max(mass / r.size, 0.0), 1.0),
            sigma_x_sq=max(slab_second / mass, SIGMA_FLOOR),
        )
        new_objective = input_objective(r, tau_r, updated)
        if new_objective < objective - MONOTONE_SLACK * max(1.0, abs(objective)):
            logger.error(
                "em objective decreased",
                iteration=iterations,
                before=objective,
                after=new_objective,
            )
            raise ConvergenceError(
                f"EM objective fell from {objective:.12g} to {new_objective:.12g}", iteration=iterations
            )

        converged = (
            _relative_change(updated.rho, params.rho) < strategy.tol
            and _relative_change(updated.sigma_x_sq, params.sigma_x_sq) < strategy.tol
        )
        params, objective = updated, new_objective
        objectives.append(objective)
        history.append(params)
        if converged:
            break

    logger.debug(
        "em input fit",
        iterations=iterations,
        converged=converged,
        rho=params.rho,
        sigma_x_sq=params.sigma_x_sq,
    )
    return InputFit(
        params=params,
        iterations=iterations,
        converged=converged,
        degenerate=degenerate,
        objective_trace=tuple(objectives),
        params_trace=tuple(history),
        em_objective=em_complete_objective(r, tau_r, params) if params.rho > 0 else objective,
    )


def adapt_input(
    strategy: InputStrategy,
    r: np.ndarray,
    tau_r: float,
    prev: InputParams,
    input_ch: InputChannel | None = None,
) -> InputFit:
    if isinstance(strategy, OracleStrategy):
        return InputFit(prev, 0, True, False, (), (prev,), float("nan"))
    return adapt_input_em(r, tau_r, prev, strategy)


# ---------------------------------------------------------------------------
# H_z
# ---------------------------------------------------------------------------


class _MarginalObjective:
    """Negated (1/m) sum_i log p_Y(y_i | lambda_z), grouped over distinct counts."""

    def __init__(self, y: np.ndarray, var_z: float, quad: QuadratureRule) -> None:
        self.values, counts = np.unique(y, return_counts=True)
        self.weights = counts / y.size
        self.var_z = var_z
        self.quad = quad
        self.evaluations = 0

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        self.evaluations += 1
        try:
            log_p, grads = output_log_marginal(
                self.values, self.var_z, theta, self.quad, with_grad=True
            )
        except ChannelOverflowError:
            return np.inf, np.zeros_like(theta)
        return -float(self.weights @ log_p), -(self.weights @ grads)


def _orient(theta: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Report the increasing branch, log f(u=1) >= log f(u=0), when it lies in the box."""
    if np.sum(theta[1:]) >= 0.0:
        return theta
    mirrored = mirror_rate_polynomial(theta)
    if np.all(mirrored >= lower) and np.all(mirrored <= upper):
        return mirrored
    return theta


def initial_output_params(strategy: MlOutputStrategy, order: int) -> PoissonLnpParams:
    """Box centre with the linear coefficient tilted up, off the u <-> 1 - u symmetric set."""
    lower, upper = strategy.bounds(order)
    start = 0.5 * (lower + upper)
    if order > 1:
        start[1] = min(start[1] + START_TILT, 0.5 * (start[1] + upper[1]))
    return PoissonLnpParams(tuple(float(v) for v in start))


def adapt_output_ml(
    p: np.ndarray,
    y: np.ndarray,
    var_z: float,
    prev: PoissonLnpParams,
    strategy: MlOutputStrategy,
    quad: QuadratureRule,
) -> OutputFit:
    p = sanitize_vector(p, "p")
    y = sanitize_counts_vector(y, "y")
    if p.size != y.size:
        raise DimensionError(f"p and y lengths differ: {p.size} vs {y.size}")
    if strategy.max_ascent_iters == 0:
        return OutputFit(prev, 0, False, ())

    lower, upper = strategy.bounds(prev.order)
    objective_fn = _MarginalObjective(y, var_z, quad)

    theta = np.clip(prev.as_vector(), lower, upper)
    if not np.isfinite(objective_fn(theta)[0]):
        logger.warning("ml ascent start non-finite, restarting from zero", prev=list(prev.lambda_z))
        theta = np.clip(np.zeros(prev.order), lower, upper)
        if not np.isfinite(objective_fn(theta)[0]):
            raise AdaptationFailureError("output log-likelihood is non-finite at the fallback start")

    trace = [-objective_fn(theta)[0]]

    def record(intermediate_result: optimize.OptimizeResult) -> None:
        trace.append(-float(intermediate_result.fun))

    result = optimize.minimize(
        objective_fn,
        theta,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(lower, upper)),
        callback=record,
        options={
            "maxiter": strategy.max_ascent_iters,
            "gtol": strategy.tol,
            "ftol": strategy.ftol,
            "maxcor": 20,
        },
    )
    if not np.all(np.isfinite(result.x)) or not np.isfinite(result.fun):
        raise AdaptationFailureError(f"output ML fit left the finite region: {result.message}")

    theta = result.x
    objective = -float(result.fun)
    theta = _orient(theta, lower, upper)
    if trace[-1] != objective:
        trace.append(objective)

    logger.debug(
        "ml output fit",
        iterations=int(result.nit),
        converged=bool(result.success),
        objective=objective,
        evaluations=objective_fn.evaluations,
        lambda_z=theta.tolist(),
    )
    return OutputFit(
        PoissonLnpParams(tuple(float(v) for v in theta)),
        int(result.nit),
        bool(result.success),
        tuple(trace),
    )


def adapt_noise_em(
    p: np.ndarray,
    y: np.ndarray,
    tau_p: float,
    prev: AwgnParams,
    strategy: EmNoiseStrategy,
) -> OutputFit:
    p = sanitize_vector(p, "p")
    y = sanitize_vector(y, "y", length=p.size)
    sigma_sq = max(prev.sigma_sq, SIGMA_FLOOR)
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, strategy.max_em_iters + 1):
        estimates = awgn_output(p, y, tau_p, sigma_sq)
        updated = max(float(np.mean((y - estimates.gz) ** 2 + estimates.z_var)), SIGMA_FLOOR)
        converged = _relative_change(updated, sigma_sq) < strategy.tol
        sigma_sq = updated
        trace.append(sigma_sq)
        if converged:
            break
    return OutputFit(AwgnParams(sigma_sq), iterations, converged, tuple(trace))


def estimate_var_z(p: np.ndarray, tau_p: float) -> float:
    """E[Z^2] under Z = P + N(0, tau_p), estimated from the population of p."""
    return float(np.mean(np.asarray(p) ** 2) + tau_p)


def adapt_output(
    strategy: OutputStrategy,
    p: np.ndarray,
    y: np.ndarray,
    tau_p: float,
    prev: OutputParams,
    output_ch: OutputChannel,
) -> OutputFit:
    if isinstance(strategy, OracleStrategy):
        return OutputFit(prev, 0, True, ())
    if isinstance(strategy, MlOutputStrategy):
        if not (isinstance(prev, PoissonLnpParams) and isinstance(output_ch, PoissonLnpOutput)):
            raise ConfigError("ml_output adaptation requires the Poisson LNP channel")
        return adapt_output_ml(p, y, estimate_var_z(p, tau_p), prev, strategy, output_ch.quad)
    if not (isinstance(prev, AwgnParams) and isinstance(output_ch, AwgnOutput)):
        raise ConfigError("em_noise adaptation requires the AWGN channel")
    return adapt_noise_em(p, y, tau_p, prev, strategy)


def adapt_oracle(
    prev_x: InputParams, prev_z: OutputParams
) -> tuple[InputParams, OutputParams]:
    """Fixed adaptation: the configured parameters, whatever the data."""
    return prev_x, prev_z
