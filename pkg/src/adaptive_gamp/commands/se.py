"""State evolution run."""

from __future__ import annotations

import click

from adaptive_gamp.commands._common import echo_paths, experiment_options, handle_errors, resolve_config
from adaptive_gamp.services.experiments import run_se


@click.command("se")
@experiment_options
@click.option("--method", type=click.Choice(["adaptive", "oracle"]), default="oracle")
@click.option("--iterations", type=click.IntRange(min=1), default=None, help="SE steps T.")
@click.pass_context
@handle_errors
def se_command(ctx: click.Context, config_path, method: str, iterations, **flags) -> None:
    se_table = {"iterations": iterations} if iterations is not None else None
    config = resolve_config(ctx, "se", config_path, se=se_table, **flags)
    echo_paths(run_se(config, method))
