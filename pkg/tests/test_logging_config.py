from __future__ import annotations

import json

from adaptive_gamp.logging_config import configure_logging, get_logger, resolve_log_level


def test_named_logger_writes_json_to_stderr(capsys):
    configure_logging("adaptive-gamp", "INFO", json_output=True)
    get_logger("adaptive_gamp.services.model").info("instance generated", m=3, n=4)

    captured = capsys.readouterr()
    assert captured.out == ""
    record = json.loads(captured.err.strip().splitlines()[-1])
    assert record["event"] == "instance generated"
    assert (record["m"], record["n"]) == (3, 4)
    assert record["app"] == "adaptive-gamp"
    assert record["level"] == "info"


def test_level_filters_lower_records(capsys):
    configure_logging("adaptive-gamp", "ERROR", json_output=True)
    logger = get_logger(__name__)
    logger.warning("dropped")
    logger.error("kept")
    lines = capsys.readouterr().err.strip().splitlines()
    assert [json.loads(line)["event"] for line in lines] == ["kept"]


def test_environment_level(monkeypatch):
    monkeypatch.setenv("AGAMP_LOG_LEVEL", " debug ")
    assert resolve_log_level() == "DEBUG"
    monkeypatch.delenv("AGAMP_LOG_LEVEL")
    assert resolve_log_level("WARNING") == "WARNING"
