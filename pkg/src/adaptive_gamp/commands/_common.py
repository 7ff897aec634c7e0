"""
Helpers shared by the sub-commands.

This module provides:
- the common experiment flags (--config, --out-dir, --seed, --workers, --trials)
- config loading with flag overrides and logging setup
- the error wrapper that turns failures into a JSON payload and exit code 1
"""

from __future__ import annotations

import functools
import json
from pathlib import Path
from typing import Any, Callable

import click

from adaptive_gamp.config import ExperimentConfig, load_config
from adaptive_gamp.errors import AgampError
from adaptive_gamp.logging_config import configure_logging, get_logger, resolve_log_level

logger = get_logger(__name__)

APP_NAME = "adaptive-gamp"


def experiment_options(command: Callable) -> Callable:
    """Attach the flags every experiment command accepts."""
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False, path_type=Path),
            default=None,
            help="TOML experiment config.",
        ),
        click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None),
        click.option("--seed", type=click.IntRange(min=0), default=None),
        click.option("--workers", type=click.IntRange(min=1), default=None),
        click.option("--trials", type=click.IntRange(min=1), default=None),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def resolve_config(
    ctx: click.Context,
    experiment: str,
    config_path: Path | None,
    out_dir: Path | None = None,
    seed: int | None = None,
    workers: int | None = None,
    trials: int | None = None,
    **sections: dict[str, Any],
) -> ExperimentConfig:
    overrides: dict[str, Any] = {
        "out_dir": out_dir,
        "seed": seed,
        "workers": workers,
        "trials": trials,
    }
    overrides.update({name: table for name, table in sections.items() if table})
    config = load_config(config_path, overrides, experiment=experiment)

    flags = ctx.find_root().obj or {}
    configure_logging(
        APP_NAME,
        flags.get("log_level") or config.logging.level or resolve_log_level(),
        flags.get("log_json") if flags.get("log_json") is not None else (config.logging.json or None),
    )
    return config


def echo_paths(paths: dict[str, Path]) -> None:
    click.echo(json.dumps({name: str(path) for name, path in paths.items()}, sort_keys=True))


def handle_errors(command: Callable) -> Callable:
    """Print ``{"error", "details"}`` to stderr and exit 1 on failure."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except AgampError as exc:
            payload = exc.to_dict()
        except OSError as exc:
            payload = {"error": "io_error", "details": str(exc)}
        logger.error("command failed", error=payload)
        click.echo(json.dumps(payload, sort_keys=True), err=True)
        raise SystemExit(1)

    return wrapper
