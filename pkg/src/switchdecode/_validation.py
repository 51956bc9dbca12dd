"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_float_matrix(x, name: str) -> np.ndarray:
    """Coerce to a 2-D float64 array and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def as_float_vector(x, name: str) -> np.ndarray:
    """Coerce to a 1-D float64 array and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={arr.ndim}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    """Raise ValueError naming the first non-finite entry, if any."""
    if np.all(np.isfinite(arr)):
        return
    idx = np.unravel_index(int(np.argmin(np.isfinite(arr))), arr.shape)
    if arr.ndim == 2:
        raise ValueError(f"{name} contains a non-finite value at row {idx[0]}, column {idx[1]}")
    raise ValueError(f"{name} contains a non-finite value at index {idx[0]}")


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_probability(value: float, name: str, inclusive: bool = True) -> float:
    value = float(value)
    if inclusive:
        if not (0.0 <= value <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    else:
        if not (0.0 < value < 1.0):
            raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_same_length(a, b, name_a: str, name_b: str) -> None:
    if len(a) != len(b):
        raise ValueError(f"{name_a} has length {len(a)} but {name_b} has length {len(b)}")


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return an owned copy locked against in-place mutation."""
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out
