"""Generate a problem instance and write it to disk."""

from __future__ import annotations

import click

from adaptive_gamp.commands._common import echo_paths, experiment_options, handle_errors, resolve_config
from adaptive_gamp.services.experiments import make_instance, sweep_points
from adaptive_gamp.services.persistence import ensure_output_dir, export_instance_csv, save_instance


@click.command("generate")
@experiment_options
@click.pass_context
@handle_errors
def generate_command(ctx: click.Context, config_path, **flags) -> None:
    """Write instance.json/.npz plus x_true.csv and y_obs.csv for the first sweep point."""
    config = resolve_config(ctx, "single", config_path, **flags)
    out_dir = ensure_output_dir(config.out_dir)
    instance = make_instance(config, sweep_points(config)[0], 0)

    json_path, npz_path = save_instance(instance, out_dir / "instance")
    x_path, y_path = export_instance_csv(instance, out_dir)
    echo_paths({"instance": json_path, "arrays": npz_path, "x_true": x_path, "y_obs": y_path})
