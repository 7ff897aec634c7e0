"""
On-disk formats: instances as a JSON document plus an ``.npz`` sidecar,
trajectories and sweep tables as CSV, run summaries as JSON.

Column layouts are documented in SCHEMA.md and versioned by
``SCHEMA_VERSION``.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import pandas as pd

from adaptive_gamp.errors import AgampError, ConfigError, OutputDirectoryError
from adaptive_gamp.logging_config import get_logger
from adaptive_gamp.services.model import InputParams, ProblemInstance, output_params_from_dict

logger = get_logger(__name__)

SCHEMA_VERSION = 1
INSTANCE_ARRAYS = ("a_matrix", "x_true", "z_true", "w_noise", "y_obs")


def ensure_output_dir(path: str | Path) -> Path:
    """Create ``path`` if needed and prove it is writable."""
    out_dir = Path(path)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out_dir, prefix=".write-check-"):
            pass
    except OSError as exc:
        raise OutputDirectoryError(f"output directory {out_dir} is not writable: {exc}") from exc
    return out_dir


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    document = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(
        json.dumps(document, sort_keys=True, indent=2, default=_jsonable) + "\n",
        encoding="utf-8",
    )
    return path


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def records_frame(records: Iterable[Any]) -> pd.DataFrame:
    """DataFrame from objects exposing ``as_row()``."""
    return pd.DataFrame([record.as_row() for record in records])


def save_instance(instance: ProblemInstance, stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    json_path = stem.with_suffix(".json")
    npz_path = stem.with_suffix(".npz")
    np.savez(npz_path, **{name: getattr(instance, name) for name in INSTANCE_ARRAYS})
    write_json(
        json_path,
        {
            "m": instance.m,
            "n": instance.n,
            "seed": instance.seed,
            "lambda_x_true": instance.lambda_x_true.as_dict(),
            "lambda_z_true": instance.lambda_z_true.as_dict(),
            "arrays": npz_path.name,
        },
    )
    logger.info("instance saved", path=str(json_path), m=instance.m, n=instance.n)
    return json_path, npz_path


def load_instance(json_path: str | Path) -> ProblemInstance:
    json_path = Path(json_path)
    try:
        document = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{json_path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{json_path} must hold a JSON object")
    if document.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"{json_path} has schema version {document.get('schema_version')}, expected {SCHEMA_VERSION}"
        )

    try:
        with np.load(json_path.parent / document["arrays"]) as arrays:
            loaded = {name: arrays[name] for name in INSTANCE_ARRAYS}
        instance = ProblemInstance(
            lambda_x_true=InputParams(**document["lambda_x_true"]),
            lambda_z_true=output_params_from_dict(document["lambda_z_true"]),
            seed=int(document["seed"]),
            **loaded,
        )
        dimensions = (int(document["m"]), int(document["n"]))
    except AgampError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{json_path}: missing field {exc}") from exc
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"{json_path}: malformed instance document: {exc}") from exc

    if (instance.m, instance.n) != dimensions:
        raise ConfigError(f"{json_path}: stored dimensions disagree with the arrays")
    return instance


def export_instance_csv(instance: ProblemInstance, out_dir: Path) -> tuple[Path, Path]:
    x_path = write_frame(
        pd.DataFrame({"index": np.arange(instance.n), "x_true": instance.x_true}),
        out_dir / "x_true.csv",
    )
    y_path = write_frame(
        pd.DataFrame({"index": np.arange(instance.m), "y_obs": instance.y_obs}),
        out_dir / "y_obs.csv",
    )
    return x_path, y_path
