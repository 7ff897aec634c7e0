from __future__ import annotations

import json

import numpy as np
import pytest

from adaptive_gamp.errors import ConfigError, OutputDirectoryError
from adaptive_gamp.services.persistence import (
    SCHEMA_VERSION,
    ensure_output_dir,
    load_instance,
    save_instance,
    write_json,
)


def test_saved_instance_loads_back(poisson_instance, tmp_path):
    json_path, npz_path = save_instance(poisson_instance, tmp_path / "instance")
    assert npz_path.exists()
    loaded = load_instance(json_path)
    assert loaded.lambda_z_true == poisson_instance.lambda_z_true
    assert loaded.lambda_x_true == poisson_instance.lambda_x_true
    np.testing.assert_array_equal(loaded.y_obs, poisson_instance.y_obs)
    np.testing.assert_array_equal(loaded.a_matrix, poisson_instance.a_matrix)


def test_schema_mismatch_is_rejected(awgn_instance, tmp_path):
    json_path, _ = save_instance(awgn_instance, tmp_path / "instance")
    document = json.loads(json_path.read_text(encoding="utf-8"))
    document["schema_version"] = SCHEMA_VERSION + 1
    json_path.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(ConfigError, match="schema version"):
        load_instance(json_path)


@pytest.mark.parametrize("missing", ["arrays", "lambda_x_true", "m"])
def test_missing_instance_field_is_a_config_error(awgn_instance, tmp_path, missing):
    json_path, _ = save_instance(awgn_instance, tmp_path / "instance")
    document = json.loads(json_path.read_text(encoding="utf-8"))
    del document[missing]
    json_path.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(ConfigError, match=missing):
        load_instance(json_path)


def test_malformed_instance_json_is_a_config_error(tmp_path):
    json_path = tmp_path / "instance.json"
    json_path.write_text('{"schema_version": 1, "arrays": ', encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_instance(json_path)
    json_path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="JSON object"):
        load_instance(json_path)


def test_json_documents_carry_schema_version(tmp_path):
    path = write_json(tmp_path / "out.json", {"mse": np.float64(0.5), "grid": np.arange(2)})
    document = json.loads(path.read_text(encoding="utf-8"))
    assert document == {"schema_version": SCHEMA_VERSION, "mse": 0.5, "grid": [0, 1]}


def test_output_directory_under_a_file(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("", encoding="utf-8")
    with pytest.raises(OutputDirectoryError):
        ensure_output_dir(blocker / "out")
    assert ensure_output_dir(tmp_path / "a" / "b").is_dir()
