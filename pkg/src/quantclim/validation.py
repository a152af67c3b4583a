"""Small input-validation helpers shared across estimators and functions."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    """Coerce to a float64 ndarray and require all entries finite."""
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_in_open_unit_interval(value, name: str):
    arr = np.asarray(value, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")
    return arr if arr.ndim else float(arr)


def check_day_of_year(d, name: str = "d"):
    arr = np.asarray(d)
    if np.any(arr < 1) or np.any(arr > 365):
        raise ValueError(f"{name} must be a day-of-year in 1..365")
    return arr
