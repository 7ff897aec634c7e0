"""
Experiment drivers behind the CLI: sweeps over (n, m/n, sigma^2) grids,
single runs with full trajectories, SE runs and engine-vs-SE diagnostics.

Trial t of every sweep point uses instance seed ``seed + t``. Trials run on
a process pool; results are collected in (point, trial) order so the
written tables do not depend on the worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

from adaptive_gamp.config import ExperimentConfig
from adaptive_gamp.errors import (
    AdaptationFailureError,
    ChannelOverflowError,
    DivergenceError,
)
from adaptive_gamp.logging_config import get_logger
from adaptive_gamp.services.adaptation import AdaptationPlan, MlOutputStrategy, initial_output_params
from adaptive_gamp.services.channels import input_channel_for, output_channel_for
from adaptive_gamp.services.diagnostics import (
    compare_trajectories,
    format_summary,
    input_suite,
    output_suite,
    parameter_consistency_report,
    se_input_sampler,
    se_output_sampler,
    theta_x_frame,
    theta_z_frame,
)
from adaptive_gamp.services.gamp import (
    GampResult,
    GampState,
    default_initial_params,
    gamp_run,
    mse_to_db,
    output_params_vector,
)
from adaptive_gamp.services.lasso import lasso_oracle_tune
from adaptive_gamp.services.model import (
    InputParams,
    OutputParams,
    ProblemInstance,
    generate_instance,
)
from adaptive_gamp.services.persistence import (
    ensure_output_dir,
    records_frame,
    write_frame,
    write_json,
)
from adaptive_gamp.services.quadrature import gauss_hermite
from adaptive_gamp.services.state_evolution import (
    SeProblem,
    SeResult,
    SeState,
    se_init,
    se_run,
)

logger = get_logger(__name__)

RECOVERABLE = (DivergenceError, AdaptationFailureError, ChannelOverflowError)


@dataclass(frozen=True)
class SweepPoint:
    n: int
    ratio: float
    sigma_sq: float
    trials: int

    @property
    def m(self) -> int:
        return max(1, int(round(self.ratio * self.n)))

    def as_dict(self) -> dict[str, float]:
        return {"n": self.n, "m": self.m, "ratio": self.ratio, "sigma_sq": self.sigma_sq}


@dataclass(frozen=True)
class TrialOutcome:
    point: int
    trial: int
    method: str
    mse: float
    diverged: bool
    iterations: int
    rho_hat: float
    sigma_x_sq_hat: float
    lambda_z_hat: tuple[float, ...]


def sweep_points(config: ExperimentConfig) -> list[SweepPoint]:
    problem = config.problem
    return [
        SweepPoint(n=n, ratio=ratio, sigma_sq=sigma_sq, trials=config.trials_for(i))
        for i, n in enumerate(problem.n)
        for ratio in problem.ratios
        for sigma_sq in problem.sigma_sq
    ]


def make_instance(config: ExperimentConfig, point: SweepPoint, trial: int) -> ProblemInstance:
    problem = config.problem
    return generate_instance(
        point.m,
        point.n,
        problem.input_params,
        problem.output_params(point.sigma_sq),
        config.seed + trial,
    )


def initial_params_for(
    config: ExperimentConfig, instance: ProblemInstance, plan: AdaptationPlan
) -> tuple[InputParams, OutputParams]:
    lambda_x, lambda_z = default_initial_params(instance, plan)
    if config.adaptation.known_initial_prior:
        lambda_x = instance.lambda_x_true
    return lambda_x, lambda_z


def run_method(
    config: ExperimentConfig,
    instance: ProblemInstance,
    method: str,
    record_trajectory: bool = False,
    on_iteration=None,
) -> GampResult:
    """One GAMP run, ``method`` being 'adaptive' or 'oracle'."""
    plan = config.adaptive_plan() if method == "adaptive" else AdaptationPlan()
    gamp_config = config.gamp.gamp_config(plan, record_trajectory)
    output_ch = output_channel_for(instance.lambda_z_true, gauss_hermite(config.problem.quadrature_order))
    return gamp_run(
        instance,
        gamp_config,
        initial_params_for(config, instance, plan),
        input_ch=input_channel_for(instance.lambda_x_true),
        output_ch=output_ch,
        on_iteration=on_iteration,
    )


def _diverged(point: int, trial: int, method: str, exc: Exception) -> TrialOutcome:
    logger.warning(
        "trial diverged",
        point=point,
        trial=trial,
        method=method,
        error=exc.to_dict() if hasattr(exc, "to_dict") else {"details": str(exc)},
    )
    return TrialOutcome(point, trial, method, float("nan"), True, 0, float("nan"), float("nan"), ())


def run_trial(config: ExperimentConfig, point_index: int, trial: int) -> list[TrialOutcome]:
    point = sweep_points(config)[point_index]
    instance = make_instance(config, point, trial)
    outcomes = []

    for method in ("adaptive", "oracle"):
        if method not in config.methods:
            continue
        try:
            result = run_method(config, instance, method)
        except RECOVERABLE as exc:
            outcomes.append(_diverged(point_index, trial, method, exc))
            continue
        final = result.final
        outcomes.append(
            TrialOutcome(
                point=point_index,
                trial=trial,
                method=method,
                mse=result.mse,
                diverged=False,
                iterations=result.iterations,
                rho_hat=final.lambda_x_hat.rho,
                sigma_x_sq_hat=final.lambda_x_hat.sigma_x_sq,
                lambda_z_hat=output_params_vector(final.lambda_z_hat),
            )
        )

    if "lasso" in config.methods and config.problem.channel == "awgn":
        tuning = lasso_oracle_tune(instance, config.lasso.lasso_config)
        outcomes.append(
            TrialOutcome(point_index, trial, "lasso", tuning.mse, False, 0, float("nan"), float("nan"), ())
        )
    return outcomes


def _run_trial_task(args: tuple[ExperimentConfig, int, int]) -> list[TrialOutcome]:
    return run_trial(*args)


def se_prediction(config: ExperimentConfig, point: SweepPoint) -> SeResult:
    problem = SeProblem(
        lambda_x_true=config.problem.input_params,
        lambda_z_true=config.problem.output_params(point.sigma_sq),
        beta=point.n / point.m,
    )
    output_ch = output_channel_for(problem.lambda_z_true, gauss_hermite(config.problem.quadrature_order))
    return se_run(
        problem,
        config.se.iterations,
        mc=config.se.monte_carlo,
        output_ch=output_ch,
        detect_fixed_point=config.experiment != "se",
    )


def _summarize(point: SweepPoint, method: str, outcomes: list[TrialOutcome]) -> dict[str, Any]:
    good = [o for o in outcomes if not o.diverged]
    mses = np.array([o.mse for o in good])
    mse = float(np.mean(mses)) if good else float("nan")
    row: dict[str, Any] = {
        **point.as_dict(),
        "method": method,
        "trials": len(outcomes),
        "mse": mse,
        "mse_se": float(np.std(mses, ddof=1) / np.sqrt(mses.size)) if mses.size > 1 else 0.0,
        "mse_db": mse_to_db(mse),
        "rho_hat": float(np.mean([o.rho_hat for o in good])) if good else float("nan"),
        "sigma_x_sq_hat": float(np.mean([o.sigma_x_sq_hat for o in good])) if good else float("nan"),
    }
    lambda_z = [o.lambda_z_hat for o in good if o.lambda_z_hat]
    for k, value in enumerate(np.mean(lambda_z, axis=0) if lambda_z else ()):
        row[f"lambda_z_hat_{k}"] = float(value)
    row["diverged"] = len(outcomes) - len(good)
    return row


def _se_row(config: ExperimentConfig, point: SweepPoint) -> dict[str, Any]:
    try:
        final = se_prediction(config, point).final
    except RECOVERABLE as exc:
        _diverged(-1, -1, "se", exc)
        return {**point.as_dict(), "method": "se", "trials": 1, "mse": float("nan"), "diverged": 1}
    row: dict[str, Any] = {
        **point.as_dict(),
        "method": "se",
        "trials": 1,
        "mse": final.mse,
        "mse_se": 0.0,
        "mse_db": mse_to_db(final.mse),
        "rho_hat": final.lambda_x_bar.rho,
        "sigma_x_sq_hat": final.lambda_x_bar.sigma_x_sq,
    }
    for k, value in enumerate(output_params_vector(final.lambda_z_bar)):
        row[f"lambda_z_hat_{k}"] = value
    row["diverged"] = 0
    return row


def sweep_table(config: ExperimentConfig, progress: bool = False) -> tuple[pd.DataFrame, pd.DataFrame]:
    """(per-point summary, per-trial outcomes), both ordered by (point, method/trial)."""
    points = sweep_points(config)
    tasks = [(config, i, t) for i, point in enumerate(points) for t in range(point.trials)]
    logger.info("sweep started", experiment=config.experiment, points=len(points), trials=len(tasks))

    bar = tqdm(total=len(tasks), disable=not progress, desc=config.experiment, unit="trial")
    results: list[list[TrialOutcome]] = []
    if config.workers == 1:
        for task in tasks:
            results.append(_run_trial_task(task))
            bar.update()
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for outcome in pool.map(_run_trial_task, tasks):
                results.append(outcome)
                bar.update()
    bar.close()

    outcomes = [o for trial in results for o in trial]
    rows = []
    for i, point in enumerate(points):
        for method in ("adaptive", "oracle", "lasso"):
            selected = [o for o in outcomes if o.point == i and o.method == method]
            if selected:
                rows.append(_summarize(point, method, selected))
        if "se" in config.methods:
            rows.append(_se_row(config, point))

    trials = pd.DataFrame(
        [
            {**points[o.point].as_dict(), "trial": o.trial, "method": o.method, "mse": o.mse,
             "iterations": o.iterations, "diverged": int(o.diverged)}
            for o in outcomes
        ]
    )
    return pd.DataFrame(rows), trials


def run_sweep(config: ExperimentConfig, progress: bool = False) -> dict[str, Path]:
    out_dir = ensure_output_dir(config.out_dir)
    started = time.perf_counter()
    summary, trials = sweep_table(config, progress)
    paths = {
        "sweep": write_frame(summary, out_dir / "sweep.csv"),
        "trials": write_frame(trials, out_dir / "trials.csv"),
    }
    paths["summary"] = write_json(
        out_dir / "summary.json",
        {
            "experiment": config.experiment,
            "points": len(sweep_points(config)),
            "diverged": int(trials["diverged"].sum()) if not trials.empty else 0,
            "wall_time_s": time.perf_counter() - started,
        },
    )
    logger.info("sweep finished", experiment=config.experiment, out_dir=str(out_dir))
    return paths


def run_single(
    config: ExperimentConfig, method: str = "adaptive", instance: ProblemInstance | None = None
) -> dict[str, Path]:
    out_dir = ensure_output_dir(config.out_dir)
    instance = instance or make_instance(config, sweep_points(config)[0], 0)
    started = time.perf_counter()
    result = run_method(config, instance, method, record_trajectory=True)
    final = result.final

    paths = {"trajectory": write_frame(records_frame(result.trajectory), out_dir / "trajectory.csv")}
    paths["summary"] = write_json(
        out_dir / "summary.json",
        {
            "method": method,
            "m": instance.m,
            "n": instance.n,
            "seed": instance.seed,
            "mse": result.mse,
            "mse_db": mse_to_db(result.mse),
            "iterations": result.iterations,
            "converged": result.converged,
            "lambda_x_hat": final.lambda_x_hat.as_dict(),
            "lambda_z_hat": final.lambda_z_hat.as_dict(),
            "wall_time_s": time.perf_counter() - started,
        },
    )
    logger.info("run finished", method=method, mse=result.mse, iterations=result.iterations)
    return paths


def se_problem_for(config: ExperimentConfig) -> SeProblem:
    point = sweep_points(config)[0]
    return SeProblem(
        lambda_x_true=config.problem.input_params,
        lambda_z_true=config.problem.output_params(point.sigma_sq),
        beta=point.n / point.m,
    )


def _se_start(config: ExperimentConfig, problem: SeProblem, plan: AdaptationPlan) -> SeState:
    """
    Adaptive SE starts like the engine: rho = 0.5 at the true prior variance
    (or the true prior when it is known) and the engine's lambda_z start.
    """
    lambda_x = problem.lambda_x_true
    if not config.adaptation.known_initial_prior:
        lambda_x = InputParams(rho=0.5, sigma_x_sq=max(2.0 * problem.tau_x0, 1e-6))
    lambda_z = problem.lambda_z_true
    if isinstance(plan.output, MlOutputStrategy):
        lambda_z = initial_output_params(plan.output, len(output_params_vector(lambda_z)))
    return se_init(problem.lambda_x_true, problem.beta, lambda_z=lambda_z, lambda_x_start=lambda_x)


def run_se(config: ExperimentConfig, method: str = "oracle") -> dict[str, Path]:
    """Exactly ``se.iterations`` SE steps; one CSV row per step."""
    out_dir = ensure_output_dir(config.out_dir)
    problem = se_problem_for(config)
    plan = config.adaptive_plan() if method == "adaptive" else AdaptationPlan()
    output_ch = output_channel_for(problem.lambda_z_true, gauss_hermite(config.problem.quadrature_order))
    initial = _se_start(config, problem, plan) if method == "adaptive" else None
    started = time.perf_counter()
    result = se_run(
        problem,
        config.se.iterations,
        adaptation=plan,
        mc=config.se.monte_carlo,
        output_ch=output_ch,
        initial=initial,
    )

    paths = {"trajectory": write_frame(records_frame(result.states[1:]), out_dir / "se_trajectory.csv")}
    final = result.final
    paths["summary"] = write_json(
        out_dir / "summary.json",
        {
            "method": method,
            "beta": problem.beta,
            "iterations": final.iter,
            "mse": final.mse,
            "mse_db": mse_to_db(final.mse),
            "lambda_x_hat": final.lambda_x_bar.as_dict(),
            "lambda_z_hat": final.lambda_z_bar.as_dict(),
            "wall_time_s": time.perf_counter() - started,
        },
    )
    return paths


def run_diagnostics(config: ExperimentConfig, method: str = "oracle") -> tuple[dict[str, Path], str]:
    """
    Run the engine once and compare its theta_x and theta_z populations with
    SE iteration by iteration: adaptive SE under the same plan for the
    adaptive method, oracle SE otherwise. Also tabulates parameter errors.
    """
    out_dir = ensure_output_dir(config.out_dir)
    instance = make_instance(config, sweep_points(config)[0], 0)
    inputs: list[pd.DataFrame] = []
    outputs: list[pd.DataFrame] = []

    def capture(state: GampState) -> None:
        inputs.append(theta_x_frame(instance.x_true, state.r, state.x_hat))
        outputs.append(theta_z_frame(instance.z_true, state.p, instance.y_obs))

    result = run_method(config, instance, method, record_trajectory=True, on_iteration=capture)

    problem = SeProblem(instance.lambda_x_true, instance.lambda_z_true, instance.beta)
    plan = config.adaptive_plan() if method == "adaptive" else AdaptationPlan()
    output_ch = output_channel_for(instance.lambda_z_true, gauss_hermite(config.problem.quadrature_order))
    se_result = se_run(
        problem,
        max(len(inputs), 1),
        adaptation=plan,
        mc=config.se.monte_carlo,
        output_ch=output_ch,
        initial=_se_start(config, problem, plan) if method == "adaptive" else None,
    )

    comparisons = pd.concat(
        [
            compare_trajectories(
                inputs,
                se_result.states,
                lambda state, seed: se_input_sampler(state, instance.lambda_x_true, seed),
                input_suite(),
                config.se.samples,
                config.se.seed,
            ),
            compare_trajectories(
                outputs,
                se_result.states,
                lambda state, seed: se_output_sampler(state, instance.lambda_z_true, seed, output_ch),
                output_suite(),
                config.se.samples,
                config.se.seed,
            ),
        ],
        ignore_index=True,
    )
    consistency = parameter_consistency_report(
        result.trajectory, (instance.lambda_x_true, instance.lambda_z_true)
    )
    paths = {
        "comparisons": write_frame(comparisons, out_dir / "diagnostics.csv"),
        "consistency": write_frame(consistency, out_dir / "consistency.csv"),
    }
    logger.info("diagnostics finished", method=method, iterations=len(inputs), out_dir=str(out_dir))
    return paths, format_summary(comparisons)
