"""Utility helpers to sanitize and normalize numerical arguments."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from adaptive_gamp.errors import DimensionError, DomainError

SEED_MAX = 2**64 - 1


def _reject_non_finite(value: float, field: str) -> None:
    if not math.isfinite(value):
        raise DomainError(f"{field} must be finite, got {value!r}")


def sanitize_count(value: int, field: str, minimum: int = 1) -> int:
    try:
        cleaned = int(value)
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"{field} must be an integer, got {value!r}") from exc

    if cleaned != value:
        raise DimensionError(f"{field} must be an integer, got {value!r}")
    if cleaned < minimum:
        raise DimensionError(f"{field} must be >= {minimum}, got {cleaned}")
    return cleaned


def sanitize_variance(value: float, field: str, allow_zero: bool = False) -> float:
    cleaned = float(value)
    _reject_non_finite(cleaned, field)

    if cleaned < 0.0 or (cleaned == 0.0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise DomainError(f"{field} must be {bound}, got {cleaned}")
    return cleaned


def sanitize_probability(value: float, field: str) -> float:
    cleaned = float(value)
    _reject_non_finite(cleaned, field)

    if not 0.0 <= cleaned <= 1.0:
        raise DomainError(f"{field} must lie in [0, 1], got {cleaned}")
    return cleaned


def sanitize_tolerance(value: float, field: str, allow_infinite: bool = False) -> float:
    cleaned = float(value)
    if math.isnan(cleaned) or cleaned < 0.0:
        raise DomainError(f"{field} must be >= 0, got {cleaned}")
    if math.isinf(cleaned) and not allow_infinite:
        raise DomainError(f"{field} must be finite, got {cleaned}")
    return cleaned


def sanitize_seed(value: int) -> int:
    seed = sanitize_count(value, "seed", minimum=0)
    if seed > SEED_MAX:
        raise DomainError(f"seed must fit in 64 bits, got {seed}")
    return seed


def sanitize_vector(
    values: Iterable[float] | np.ndarray,
    field: str,
    length: int | None = None,
    allow_empty: bool = False,
) -> np.ndarray:
    cleaned = np.asarray(values, dtype=np.float64)
    if cleaned.ndim != 1:
        raise DimensionError(f"{field} must be one-dimensional, got shape {cleaned.shape}")
    if cleaned.size == 0 and not allow_empty:
        raise DimensionError(f"{field} must be nonempty")
    if length is not None and cleaned.size != length:
        raise DimensionError(f"{field} must have length {length}, got {cleaned.size}")
    if not np.all(np.isfinite(cleaned)):
        raise DomainError(f"{field} contains non-finite entries")
    return cleaned


def sanitize_counts_vector(values: Iterable[float] | np.ndarray, field: str) -> np.ndarray:
    """Poisson observations: nonnegative integers stored as float64."""
    cleaned = sanitize_vector(values, field)
    if np.any(cleaned < 0):
        raise DomainError(f"{field} must be nonnegative")
    if np.any(cleaned != np.round(cleaned)):
        raise DomainError(f"{field} must contain integer counts")
    return cleaned
