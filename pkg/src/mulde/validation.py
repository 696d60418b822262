"""Small input-validation helpers used across the package."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, UsageError


def as_matrix(x, name="X", dtype=np.float64) -> np.ndarray:
    """Coerce to a 2-D float array (one row per sample)."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D (n_samples, n_features), got shape {arr.shape}")
    return arr


def as_vector(x, name="x", dtype=np.float64) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def check_dim(arr: np.ndarray, dim: int, name="x") -> None:
    if arr.shape[-1] != dim:
        raise DimensionError(f"{name} has dimension {arr.shape[-1]}, expected {dim}")


def check_positive(value, name) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise UsageError(f"{name} must be a positive finite number, got {value}")
    return value


def check_nonneg(value, name) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0.0:
        raise UsageError(f"{name} must be a nonnegative finite number, got {value}")
    return value
