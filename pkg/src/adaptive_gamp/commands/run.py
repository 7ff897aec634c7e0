"""Single GAMP run with a recorded trajectory."""

from __future__ import annotations

from pathlib import Path

import click

from adaptive_gamp.commands._common import echo_paths, experiment_options, handle_errors, resolve_config
from adaptive_gamp.services.experiments import run_single
from adaptive_gamp.services.persistence import load_instance


@click.command("run")
@experiment_options
@click.option("--method", type=click.Choice(["adaptive", "oracle"]), default="adaptive")
@click.option(
    "--instance",
    "instance_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="instance.json written by `generate`; default is a fresh instance.",
)
@click.pass_context
@handle_errors
def run_command(ctx: click.Context, config_path, method: str, instance_path, **flags) -> None:
    config = resolve_config(ctx, "single", config_path, **flags)
    instance = load_instance(instance_path) if instance_path else None
    echo_paths(run_single(config, method, instance))
