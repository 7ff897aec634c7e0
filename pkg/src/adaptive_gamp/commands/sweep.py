"""Experiment sweeps (fig2a, fig2b, fig3)."""

from __future__ import annotations

import click

from adaptive_gamp.commands._common import echo_paths, experiment_options, handle_errors, resolve_config
from adaptive_gamp.services.experiments import run_sweep


@click.command("sweep")
@experiment_options
@click.option("--progress/--no-progress", default=False, help="Progress bar on stderr.")
@click.pass_context
@handle_errors
def sweep_command(ctx: click.Context, config_path, progress: bool, **flags) -> None:
    """Run every sweep point and write sweep.csv, trials.csv and summary.json."""
    config = resolve_config(ctx, "fig2a", config_path, **flags)
    echo_paths(run_sweep(config, progress=progress))
