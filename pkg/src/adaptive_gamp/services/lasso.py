"""
LASSO baseline: minimize 0.5 ||y - A x||^2 + reg ||x||_1 by cyclic
coordinate descent, and pick the regularization weight with the smallest
MSE against the true signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adaptive_gamp.errors import ConfigError, DomainError
from adaptive_gamp.logging_config import get_logger
from adaptive_gamp.services.model import ProblemInstance
from adaptive_gamp.utils.validation import sanitize_count, sanitize_tolerance

logger = get_logger(__name__)

OBJECTIVE_SLACK = 1e-12


@dataclass(frozen=True)
class LassoConfig:
    """
    ``reg_grid`` holds absolute weights. When it is None the grid is
    ``grid_size`` log-spaced weights over ``grid_span`` times ||A^T y||_inf.
    """

    reg_grid: tuple[float, ...] | None = None
    grid_size: int = 30
    grid_span: tuple[float, float] = (1e-3, 1.0)
    max_iters: int = 10_000
    tol: float = 1e-8

    def __post_init__(self) -> None:
        sanitize_count(self.max_iters, "lasso max_iters")
        sanitize_count(self.grid_size, "lasso grid_size")
        sanitize_tolerance(self.tol, "lasso tol")
        if self.reg_grid is not None:
            if not self.reg_grid:
                raise ConfigError("lasso reg_grid is empty")
            if any(not w > 0.0 for w in self.reg_grid):
                raise ConfigError("lasso regularization weights must be > 0")
        low, high = self.grid_span
        if not 0.0 < low <= high:
            raise ConfigError(f"invalid lasso grid span {self.grid_span}")

    def weights(self, a_matrix: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Grid in decreasing order, for warm starts from the sparse end."""
        if self.reg_grid is not None:
            return np.sort(np.asarray(self.reg_grid, dtype=np.float64))[::-1]
        scale = float(np.max(np.abs(a_matrix.T @ y)))
        low, high = self.grid_span
        return np.geomspace(high, low, self.grid_size) * max(scale, np.finfo(float).tiny)


@dataclass(frozen=True, eq=False)
class LassoSolution:
    x_hat: np.ndarray
    reg_weight: float
    iterations: int
    converged: bool
    #: objective after each full sweep
    objective_trace: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class LassoTuning:
    x_hat: np.ndarray
    reg_weight: float
    mse: float
    path: tuple[tuple[float, float], ...]


def lasso_objective(a_matrix: np.ndarray, y: np.ndarray, x: np.ndarray, reg_weight: float) -> float:
    residual = y - a_matrix @ x
    return 0.5 * float(residual @ residual) + reg_weight * float(np.sum(np.abs(x)))


def soft_threshold(value: float, threshold: float) -> float:
    return float(np.sign(value) * max(abs(value) - threshold, 0.0))


def lasso_solve(
    a_matrix: np.ndarray,
    y: np.ndarray,
    reg_weight: float,
    config: LassoConfig | None = None,
    x0: np.ndarray | None = None,
) -> LassoSolution:
    config = config or LassoConfig()
    if not reg_weight > 0.0:
        raise DomainError(f"reg_weight must be > 0, got {reg_weight}")
    a = np.asfortranarray(a_matrix, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = a.shape[1]

    # zero satisfies the optimality condition exactly
    if reg_weight >= float(np.max(np.abs(a.T @ y))):
        zero = np.zeros(n)
        return LassoSolution(zero, reg_weight, 0, True, (lasso_objective(a, y, zero, reg_weight),))

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    col_sq = np.sum(a**2, axis=0)
    residual = y - a @ x
    objective = lasso_objective(a, y, x, reg_weight)
    trace = [objective]
    converged = False
    sweep = 0

    for sweep in range(1, config.max_iters + 1):
        max_delta = 0.0
        for j in range(n):
            if col_sq[j] == 0.0:
                continue
            column = a[:, j]
            old = x[j]
            new = soft_threshold(column @ residual + col_sq[j] * old, reg_weight) / col_sq[j]
            if new != old:
                residual -= column * (new - old)
                x[j] = new
                max_delta = max(max_delta, abs(new - old))

        new_objective = lasso_objective(a, y, x, reg_weight)
        if new_objective > objective + OBJECTIVE_SLACK * max(1.0, abs(objective)):
            logger.warning("lasso objective increased", sweep=sweep, before=objective, after=new_objective)
        objective = new_objective
        trace.append(objective)

        if max_delta < config.tol * max(1.0, float(np.max(np.abs(x)))):
            converged = True
            break

    if not converged:
        logger.info("lasso hit iteration cap", reg_weight=reg_weight, sweeps=sweep)
    return LassoSolution(x, reg_weight, sweep, converged, tuple(trace))


def lasso_oracle_tune(instance: ProblemInstance, config: LassoConfig | None = None) -> LassoTuning:
    """Solve along the grid with warm starts and keep the lowest-MSE solution."""
    config = config or LassoConfig()
    a, y = instance.a_matrix, instance.y_obs

    best: LassoSolution | None = None
    best_mse = np.inf
    path = []
    x_warm = None
    for weight in config.weights(a, y):
        solution = lasso_solve(a, y, float(weight), config, x0=x_warm)
        x_warm = solution.x_hat
        mse = float(np.mean((solution.x_hat - instance.x_true) ** 2))
        path.append((float(weight), mse))
        if mse < best_mse:
            best, best_mse = solution, mse

    logger.debug("lasso tuned", reg_weight=best.reg_weight, mse=best_mse)
    return LassoTuning(best.x_hat, best.reg_weight, best_mse, tuple(path))
