"""Shared input coercion and shape checks."""

from __future__ import annotations

import numpy as np


def as_float_matrix(x, name: str) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_float_vector(x, name: str) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_square(a: np.ndarray, name: str) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")


def check_symmetric(a: np.ndarray, name: str, tol: float = 1e-10) -> None:
    """Reject matrices whose worst asymmetry exceeds tol * max(1, max|a|)."""
    check_square(a, name)
    gap = np.abs(a - a.T)
    worst = np.unravel_index(np.argmax(gap), gap.shape)
    bound = tol * max(1.0, float(np.max(np.abs(a))))
    if gap[worst] > bound:
        i, j = worst
        raise ValueError(
            f"{name} is not symmetric: |{name}[{i},{j}] - {name}[{j},{i}]| = "
            f"{gap[worst]:.3e} exceeds {bound:.3e}"
        )
