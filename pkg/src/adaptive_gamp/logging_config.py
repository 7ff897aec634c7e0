"""
Structured logging setup.

Modules obtain a logger with ``get_logger(__name__)`` and attach context as
keyword arguments, e.g. ``logger.warning("trial diverged", error={...})``.
"""

from __future__ import annotations

import logging
import os
import sys

import structlog

LOG_LEVEL_ENV = "AGAMP_LOG_LEVEL"
LOG_JSON_ENV = "AGAMP_LOG_JSON"

_configured = False


def _stderr_logger(*args) -> structlog.PrintLogger:
    # looked up per call so redirected streams are honored
    return structlog.PrintLogger(file=sys.stderr)


def resolve_log_level(default: str = "INFO") -> str:
    return (os.getenv(LOG_LEVEL_ENV) or default).strip().upper()


def configure_logging(
    app_name: str, log_level: str = "INFO", json_output: bool | None = None
) -> None:
    """Route structlog output to stderr at ``log_level``."""
    global _configured

    level = logging.getLevelName((log_level or "INFO").strip().upper())
    if not isinstance(level, int):
        level = logging.INFO
    if json_output is None:
        json_output = (os.getenv(LOG_JSON_ENV) or "").strip() == "1"

    renderer = (
        structlog.processors.JSONRenderer()
        if json_output
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=_stderr_logger,
        cache_logger_on_first_use=False,
    )
    structlog.contextvars.bind_contextvars(app=app_name)
    _configured = True


def get_logger(name: str | None = None) -> structlog.typing.FilteringBoundLogger:
    if not _configured:
        configure_logging("adaptive-gamp", resolve_log_level("WARNING"))
    return structlog.get_logger(name)
