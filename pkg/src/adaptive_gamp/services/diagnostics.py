"""
Empirical-vs-predicted comparisons of GAMP populations.

A population is a DataFrame whose rows are the per-component tuples
theta_x = (x, r, x_hat) or theta_z = (z, p, y). Test functions of order 2
are averaged over the empirical population and over draws from the state
evolution's limiting distribution, and the gap is reported as a z-score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd

from adaptive_gamp.errors import ConfigError
from adaptive_gamp.logging_config import get_logger
from adaptive_gamp.services.gamp import IterationRecord, output_params_vector
from adaptive_gamp.services.channels import OutputChannel
from adaptive_gamp.services.model import InputParams, OutputParams
from adaptive_gamp.services.state_evolution import SeState, sample_theta_x, sample_theta_z

logger = get_logger(__name__)

THETA_X_COLUMNS = ("x", "r", "x_hat")
THETA_Z_COLUMNS = ("z", "p", "y")

PL_CHECK_POINTS = 4000
PL_CHECK_SEED = 20240917

Sampler = Callable[[int], pd.DataFrame]


@dataclass(frozen=True)
class TestFunction:
    """
    A scalar function of some population columns, checked at construction to
    satisfy |phi(a) - phi(b)| <= L (1 + |a| + |b|) |a - b| on a seeded grid
    spanning magnitudes 1e-2 .. 1e3.
    """

    __test__ = False

    name: str
    columns: tuple[str, ...]
    fn: Callable[..., np.ndarray]
    bound: float = 10.0

    def __post_init__(self) -> None:
        if not self.columns:
            raise ConfigError(f"test function {self.name!r} reads no columns")
        ratio = pseudo_lipschitz_ratio(self.fn, len(self.columns))
        if not ratio <= self.bound:
            raise ConfigError(
                f"test function {self.name!r} is not pseudo-Lipschitz of order 2 "
                f"(observed constant {ratio:.3g} > {self.bound})"
            )

    def __call__(self, frame: pd.DataFrame) -> np.ndarray:
        return np.asarray(self.fn(*(frame[c].to_numpy() for c in self.columns)), dtype=np.float64)


def pseudo_lipschitz_ratio(fn: Callable[..., np.ndarray], dim: int) -> float:
    """Largest observed |phi(a)-phi(b)| / ((1+|a|+|b|)|a-b|) over the check grid."""
    rng = np.random.Generator(np.random.PCG64(PL_CHECK_SEED))
    scale = 10.0 ** rng.uniform(-2.0, 3.0, size=(PL_CHECK_POINTS, 1))
    step = 10.0 ** rng.uniform(-4.0, 1.0, size=(PL_CHECK_POINTS, 1))
    a = scale * rng.standard_normal((PL_CHECK_POINTS, dim))
    b = a + step * scale * rng.standard_normal((PL_CHECK_POINTS, dim))

    with np.errstate(over="ignore", invalid="ignore"):
        phi_a = np.asarray(fn(*a.T), dtype=np.float64)
        phi_b = np.asarray(fn(*b.T), dtype=np.float64)
    gap = np.linalg.norm(a - b, axis=1)
    weight = (1.0 + np.linalg.norm(a, axis=1) + np.linalg.norm(b, axis=1)) * gap
    keep = gap > 0
    ratios = np.abs(phi_a - phi_b)[keep] / weight[keep]
    if not np.all(np.isfinite(ratios)):
        return float("inf")
    return float(np.max(ratios))


@dataclass(frozen=True)
class TestFunctionSuite:
    __test__ = False

    functions: tuple[TestFunction, ...]

    def __iter__(self):
        return iter(self.functions)

    def __len__(self) -> int:
        return len(self.functions)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.functions)


def _soft_support(value: np.ndarray, width: float = 0.5) -> np.ndarray:
    return 1.0 - np.exp(-0.5 * (value / width) ** 2)


def input_suite() -> TestFunctionSuite:
    return TestFunctionSuite(
        (
            TestFunction("squared_error", ("x", "x_hat"), lambda x, xh: (x - xh) ** 2),
            TestFunction("x_second_moment", ("x",), lambda x: x**2),
            TestFunction("x_hat_second_moment", ("x_hat",), lambda xh: xh**2),
            TestFunction("correlation", ("x", "x_hat"), lambda x, xh: x * xh),
            TestFunction("r_second_moment", ("r",), lambda r: r**2),
            TestFunction("soft_support", ("x_hat",), _soft_support),
        )
    )


def output_suite() -> TestFunctionSuite:
    return TestFunctionSuite(
        (
            TestFunction("z_second_moment", ("z",), lambda z: z**2),
            TestFunction("p_second_moment", ("p",), lambda p: p**2),
            TestFunction("z_p_product", ("z", "p"), lambda z, p: z * p),
            TestFunction("residual_second_moment", ("z", "p"), lambda z, p: (z - p) ** 2),
            TestFunction("y_second_moment", ("y",), lambda y: y**2),
        )
    )


@dataclass(frozen=True)
class Comparison:
    name: str
    empirical_mean: float
    predicted_mean: float
    empirical_se: float
    predicted_se: float
    z_score: float


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    if values.size < 2:
        return float(np.mean(values)), 0.0
    return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(values.size))


def _z_score(diff: float, se: float) -> float:
    if se > 0.0:
        return diff / se
    if diff == 0.0:
        return 0.0
    return float(np.copysign(np.inf, diff))


def pl2_compare(
    empirical: pd.DataFrame,
    predicted: pd.DataFrame | Sampler,
    suite: TestFunctionSuite,
    mc_samples: int = 100_000,
) -> list[Comparison]:
    if len(suite) == 0:
        raise ConfigError("test function suite is empty")
    if empirical.empty:
        raise ConfigError("empirical population is empty")
    predicted_frame = predicted(mc_samples) if callable(predicted) else predicted

    rows = []
    for function in suite:
        emp_mean, emp_se = _mean_and_se(function(empirical))
        pred_mean, pred_se = _mean_and_se(function(predicted_frame))
        diff = emp_mean - pred_mean
        rows.append(
            Comparison(
                name=function.name,
                empirical_mean=emp_mean,
                predicted_mean=pred_mean,
                empirical_se=emp_se,
                predicted_se=pred_se,
                z_score=_z_score(diff, float(np.hypot(emp_se, pred_se))),
            )
        )
    return rows


def theta_x_frame(x: np.ndarray, r: np.ndarray, x_hat: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"x": x, "r": r, "x_hat": x_hat})


def theta_z_frame(z: np.ndarray, p: np.ndarray, y: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"z": z, "p": p, "y": y})


def se_input_sampler(state: SeState, lambda_x_true: InputParams, seed: int) -> Sampler:
    def sample(size: int) -> pd.DataFrame:
        draws = sample_theta_x(lambda_x_true, state.tau_r_bar, state.lambda_x_bar, size, seed)
        return pd.DataFrame(draws, columns=list(THETA_X_COLUMNS))

    return sample


def se_output_sampler(
    state: SeState,
    lambda_z_true: OutputParams,
    seed: int,
    output_ch: OutputChannel | None = None,
) -> Sampler:
    """(Z, P) ~ N(0, K_p) of the state's output half, Y from the true channel."""

    def sample(size: int) -> pd.DataFrame:
        draws = sample_theta_z(state.k_p, lambda_z_true, size, seed, output_ch)
        return pd.DataFrame(draws, columns=list(THETA_Z_COLUMNS))

    return sample


def compare_trajectories(
    populations: Sequence[pd.DataFrame],
    se_states: Sequence[SeState],
    sampler_for: Callable[[SeState, int], Sampler],
    suite: TestFunctionSuite,
    mc_samples: int,
    seed: int,
) -> pd.DataFrame:
    """
    Compare the engine's population from iteration k with draws from SE
    state k, for k = 1 .. min(len(populations), len(se_states) - 1).
    ``sampler_for(state, seed)`` builds the SE side.
    """
    records = []
    for k, population in enumerate(populations, start=1):
        if k >= len(se_states):
            break
        sampler = sampler_for(se_states[k], seed + k)
        for row in pl2_compare(population, sampler, suite, mc_samples):
            records.append({"iter": k, **row.__dict__})
    return comparison_frame(records)


def comparison_frame(rows: Iterable[Comparison | dict]) -> pd.DataFrame:
    columns = ["name", "empirical_mean", "predicted_mean", "empirical_se", "predicted_se", "z_score"]
    records = [row if isinstance(row, dict) else row.__dict__ for row in rows]
    frame = pd.DataFrame.from_records(records)
    if frame.empty:
        return pd.DataFrame(columns=columns)
    leading = ["iter"] if "iter" in frame.columns else []
    return frame[leading + columns]


def format_summary(frame: pd.DataFrame, threshold: float = 3.0) -> str:
    if frame.empty:
        return "no comparisons"
    lines = []
    for name, group in frame.groupby("name", sort=False):
        within = float(np.mean(np.abs(group["z_score"]) <= threshold))
        worst = float(np.max(np.abs(group["z_score"])))
        lines.append(f"{name:<24} |z|<={threshold:g}: {within:6.1%}   max |z|: {worst:8.3f}")
    return "\n".join(lines)


def parameter_consistency_report(
    trajectory: Sequence[IterationRecord],
    truth: tuple[InputParams, OutputParams],
) -> pd.DataFrame:
    """Per-iteration |rho_hat - rho|, relative sigma_x^2 error and sup-norm lambda_z error."""
    lambda_x, lambda_z = truth
    lambda_z_vec = np.asarray(output_params_vector(lambda_z))
    rows = []
    for record in trajectory:
        rows.append(
            {
                "iter": record.iter,
                "rho_error": abs(record.rho_hat - lambda_x.rho),
                "sigma_x_sq_rel_error": abs(record.sigma_x_sq_hat - lambda_x.sigma_x_sq)
                / lambda_x.sigma_x_sq,
                "lambda_z_error": float(
                    np.max(np.abs(np.asarray(record.lambda_z_hat) - lambda_z_vec))
                ),
            }
        )
    return pd.DataFrame(rows, columns=["iter", "rho_error", "sigma_x_sq_rel_error", "lambda_z_error"])
