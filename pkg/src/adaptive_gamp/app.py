"""
Factory for the adaptive-gamp command-line application.

Logging is configured before any sub-command runs; commands reconfigure it
once their experiment config (which may carry a [logging] table) is known.
"""

from __future__ import annotations

import click

from adaptive_gamp import __version__
from adaptive_gamp.commands import COMMANDS
from adaptive_gamp.commands._common import APP_NAME
from adaptive_gamp.logging_config import configure_logging, resolve_log_level


def register_commands(cli: click.Group) -> None:
    for command in COMMANDS:
        cli.add_command(command)


def create_cli() -> click.Group:
    """
    Build the ``agamp`` command group.
    """

    @click.group(name="agamp", help="Adaptive GAMP experiments and state evolution.")
    @click.version_option(__version__, prog_name=APP_NAME)
    @click.option("--log-level", default=None, help="Overrides AGAMP_LOG_LEVEL and the config file.")
    @click.option("--log-json/--log-text", default=None, help="JSON log lines on stderr.")
    @click.pass_context
    def cli(ctx: click.Context, log_level: str | None, log_json: bool | None) -> None:
        ctx.obj = {"log_level": log_level, "log_json": log_json}
        configure_logging(APP_NAME, log_level or resolve_log_level(), log_json)

    register_commands(cli)
    return cli


cli = create_cli()
