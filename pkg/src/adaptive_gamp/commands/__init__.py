"""
Sub-commands of the adaptive-gamp CLI.

- generate: write a problem instance
- run: one GAMP run with trajectory
- se: one state evolution run
- sweep: figure sweeps
- diagnose: engine-vs-SE test-function report
"""

import click

from .diagnose import diagnose_command
from .generate import generate_command
from .run import run_command
from .se import se_command
from .sweep import sweep_command

COMMANDS: tuple[click.Command, ...] = (
    generate_command,
    run_command,
    se_command,
    sweep_command,
    diagnose_command,
)
