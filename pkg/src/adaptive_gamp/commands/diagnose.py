"""Engine-vs-SE diagnostics report."""

from __future__ import annotations

import click

from adaptive_gamp.commands._common import echo_paths, experiment_options, handle_errors, resolve_config
from adaptive_gamp.services.experiments import run_diagnostics


@click.command("diagnose")
@experiment_options
@click.option("--method", type=click.Choice(["adaptive", "oracle"]), default="oracle")
@click.pass_context
@handle_errors
def diagnose_command(ctx: click.Context, config_path, method: str, **flags) -> None:
    config = resolve_config(ctx, "single", config_path, **flags)
    paths, summary = run_diagnostics(config, method)
    report = paths["comparisons"].with_name("diagnostics.txt")
    report.write_text(summary + "\n", encoding="utf-8")
    paths["report"] = report
    echo_paths(paths)
    click.echo(summary)
