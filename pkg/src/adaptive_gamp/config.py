"""
Experiment configuration.

A config is a TOML document with optional ``[problem]``, ``[gamp]``,
``[adaptation]``, ``[se]``, ``[lasso]`` and ``[logging]`` tables on top of
a few top-level keys. Values are layered as

    built-in defaults for the experiment  <  config file  <  CLI overrides

and the result is frozen into ``ExperimentConfig``. Any unknown key is a
``ConfigError``.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from adaptive_gamp.errors import ConfigError
from adaptive_gamp.services.adaptation import (
    AdaptationPlan,
    EmInputStrategy,
    EmNoiseStrategy,
    MlOutputStrategy,
    OracleStrategy,
)
from adaptive_gamp.services.gamp import GampConfig
from adaptive_gamp.services.lasso import LassoConfig
from adaptive_gamp.services.model import AwgnParams, InputParams, OutputParams, PoissonLnpParams
from adaptive_gamp.services.state_evolution import MonteCarloConfig
from adaptive_gamp.utils.validation import (
    sanitize_count,
    sanitize_probability,
    sanitize_seed,
    sanitize_variance,
)

EXPERIMENTS = ("fig2a", "fig2b", "fig3", "single", "se")
METHODS = ("adaptive", "oracle", "lasso", "se")
CHANNELS = ("awgn", "poisson_lnp")
LNP_TRUTH = (-4.88, 7.41, 2.58)


@dataclass(frozen=True)
class ProblemSettings:
    n: tuple[int, ...] = (400,)
    ratios: tuple[float, ...] = (0.75,)
    channel: str = "awgn"
    rho: float = 0.2
    sigma_x_sq: float = 5.0
    sigma_sq: tuple[float, ...] = (0.1,)
    lambda_z: tuple[float, ...] = LNP_TRUTH
    quadrature_order: int = 41

    def __post_init__(self) -> None:
        if not self.n or not self.ratios or not self.sigma_sq:
            raise ConfigError("sweep grids must be nonempty")
        for n in self.n:
            sanitize_count(n, "n")
        for ratio in self.ratios:
            if not ratio > 0.0:
                raise ConfigError(f"measurement ratio must be > 0, got {ratio}")
        if self.channel not in CHANNELS:
            raise ConfigError(f"unknown channel {self.channel!r}, expected one of {CHANNELS}")
        sanitize_probability(self.rho, "rho")
        sanitize_variance(self.sigma_x_sq, "sigma_x_sq")
        for sigma_sq in self.sigma_sq:
            sanitize_variance(sigma_sq, "sigma_sq", allow_zero=True)
        sanitize_count(self.quadrature_order, "quadrature_order")

    @property
    def input_params(self) -> InputParams:
        return InputParams(rho=self.rho, sigma_x_sq=self.sigma_x_sq)

    def output_params(self, sigma_sq: float) -> OutputParams:
        if self.channel == "awgn":
            return AwgnParams(sigma_sq)
        return PoissonLnpParams(self.lambda_z)


@dataclass(frozen=True)
class GampSettings:
    max_iters: int = 200
    stop_tol: float = 1e-8
    variance_floor: float = 1e-12
    damping: float = 1.0

    def gamp_config(self, plan: AdaptationPlan, record_trajectory: bool = False) -> GampConfig:
        return GampConfig(
            max_iters=self.max_iters,
            stop_tol=self.stop_tol,
            variance_floor=self.variance_floor,
            adaptation=plan,
            record_trajectory=record_trajectory,
            damping=self.damping,
        )


@dataclass(frozen=True)
class AdaptationSettings:
    input: str = "em"
    output: str = "auto"
    every: int = 1
    #: start adaptive runs from the true lambda_x
    known_initial_prior: bool = False
    em_max_iters: int = 200
    em_tol: float = 1e-6
    ml_max_iters: int = 500
    ml_tol: float = 1e-8
    ml_ftol: float = 1e-15
    ml_box_half_width: float = 20.0

    def __post_init__(self) -> None:
        if self.input not in ("em", "oracle"):
            raise ConfigError(f"unknown input adaptation {self.input!r}")
        if self.output not in ("auto", "ml", "em_noise", "oracle"):
            raise ConfigError(f"unknown output adaptation {self.output!r}")
        if not self.ml_box_half_width > 0.0:
            raise ConfigError("ml_box_half_width must be > 0")

    def plan(self, channel: str, order: int) -> AdaptationPlan:
        """Plan for the adaptive method; the output side follows the channel when 'auto'."""
        input_strategy = (
            EmInputStrategy(self.em_max_iters, self.em_tol) if self.input == "em" else OracleStrategy()
        )
        output = self.output
        if output == "auto":
            output = "ml" if channel == "poisson_lnp" else "oracle"

        if output == "ml":
            half = self.ml_box_half_width
            output_strategy = MlOutputStrategy(
                max_ascent_iters=self.ml_max_iters,
                tol=self.ml_tol,
                ftol=self.ml_ftol,
                box=tuple((-half, half) for _ in range(order)),
            )
        elif output == "em_noise":
            output_strategy = EmNoiseStrategy(self.em_max_iters, self.em_tol)
        else:
            output_strategy = OracleStrategy()
        return AdaptationPlan(input=input_strategy, output=output_strategy, every=self.every)


@dataclass(frozen=True)
class SeSettings:
    iterations: int = 30
    samples: int = 100_000
    seed: int = 0
    check_general: bool = False

    def __post_init__(self) -> None:
        sanitize_count(self.iterations, "se iterations")

    @property
    def monte_carlo(self) -> MonteCarloConfig:
        return MonteCarloConfig(samples=self.samples, seed=self.seed, check_general=self.check_general)


@dataclass(frozen=True)
class LassoSettings:
    grid_size: int = 30
    grid_low: float = 1e-3
    grid_high: float = 1.0
    max_iters: int = 10_000
    tol: float = 1e-8

    @property
    def lasso_config(self) -> LassoConfig:
        return LassoConfig(
            grid_size=self.grid_size,
            grid_span=(self.grid_low, self.grid_high),
            max_iters=self.max_iters,
            tol=self.tol,
        )


@dataclass(frozen=True)
class LoggingSettings:
    #: None defers to AGAMP_LOG_LEVEL
    level: str | None = None
    json: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "single"
    seed: int = 0
    trials: tuple[int, ...] = (1,)
    workers: int = 1
    out_dir: Path = Path("results")
    methods: tuple[str, ...] = ("adaptive", "oracle")
    problem: ProblemSettings = field(default_factory=ProblemSettings)
    gamp: GampSettings = field(default_factory=GampSettings)
    adaptation: AdaptationSettings = field(default_factory=AdaptationSettings)
    se: SeSettings = field(default_factory=SeSettings)
    lasso: LassoSettings = field(default_factory=LassoSettings)
    logging: LoggingSettings = field(default_factory=LoggingSettings)

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}, expected one of {EXPERIMENTS}")
        sanitize_seed(self.seed)
        sanitize_count(self.workers, "workers")
        if len(self.trials) not in (1, len(self.problem.n)):
            raise ConfigError("trials must be a single count or one count per n")
        for count in self.trials:
            sanitize_count(count, "trials")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")

    def trials_for(self, n_index: int) -> int:
        return self.trials[0] if len(self.trials) == 1 else self.trials[n_index]

    def adaptive_plan(self) -> AdaptationPlan:
        return self.adaptation.plan(self.problem.channel, len(self.problem.lambda_z))


_BASE: dict[str, Any] = {"problem": {}, "gamp": {}, "adaptation": {}, "se": {}, "lasso": {}, "logging": {}}

DEFAULTS: dict[str, dict[str, Any]] = {
    "fig2a": {
        "trials": 1000,
        "out_dir": "results/fig2a",
        "methods": ["adaptive", "oracle", "lasso", "se"],
        "problem": {"n": 400, "ratios": [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0], "sigma_sq": 0.1},
    },
    "fig2b": {
        "trials": 1000,
        "out_dir": "results/fig2b",
        "methods": ["adaptive", "oracle", "lasso", "se"],
        "problem": {
            "n": 400,
            "ratios": 0.75,
            "sigma_sq": [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0],
        },
    },
    "fig3": {
        "trials": [100, 10],
        "out_dir": "results/fig3",
        "methods": ["adaptive", "oracle", "se"],
        "problem": {
            "n": [1000, 10000],
            "ratios": [1.0, 2.0, 3.0, 4.0],
            "channel": "poisson_lnp",
            "rho": 0.1,
            "sigma_x_sq": 30.0,
            "lambda_z": list(LNP_TRUTH),
        },
        "adaptation": {"known_initial_prior": True},
    },
    "single": {"trials": 1, "out_dir": "results/single", "methods": ["adaptive", "oracle"]},
    "se": {"trials": 1, "out_dir": "results/se", "methods": ["se"]},
}

_TUPLE_KEYS = {"n", "ratios", "sigma_sq", "lambda_z", "trials", "methods"}
_SECTIONS = {
    "problem": ProblemSettings,
    "gamp": GampSettings,
    "adaptation": AdaptationSettings,
    "se": SeSettings,
    "lasso": LassoSettings,
    "logging": LoggingSettings,
}


def _merge(base: dict[str, Any], update: Mapping[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _as_tuple(value: Any) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def _build(cls, table: Mapping[str, Any], where: str):
    if not isinstance(table, Mapping):
        raise ConfigError(f"{where} must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    values = {
        key: _as_tuple(value) if key in _TUPLE_KEYS else value for key, value in table.items()
    }
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with path.open("rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    experiment: str | None = None,
) -> ExperimentConfig:
    document = read_config_file(path) if path is not None else {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    name = overrides.get("experiment") or document.get("experiment") or experiment or "single"
    if name not in DEFAULTS:
        raise ConfigError(f"unknown experiment {name!r}, expected one of {EXPERIMENTS}")

    merged = _merge(_merge(_merge(_BASE, DEFAULTS[name]), document), overrides)
    merged["experiment"] = name

    sections = {key: _build(cls, merged.pop(key), f"[{key}]") for key, cls in _SECTIONS.items()}
    if "out_dir" in merged:
        merged["out_dir"] = Path(merged["out_dir"])
    return _build(ExperimentConfig, {**merged, **sections}, "config")
