"""Shared input validation helpers.

Every public entry point funnels its array arguments through these checks so
that malformed input fails early with a uniform message instead of surfacing
as a numpy broadcasting error deep inside a computation.
"""

from __future__ import annotations

import numpy as np


def check_evidence_vector(e, name: str = "evidence") -> np.ndarray:
    """Validate a single evidence vector: 1-D, length >= 2, finite, >= 0."""
    arr = np.asarray(e, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError(f"{name} needs at least 2 classes, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} entries must be finite")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} entries must be non-negative")
    return arr


def check_evidence_matrix(e, name: str = "evidence") -> np.ndarray:
    """Validate a stack of evidence vectors with identical class count."""
    arr = np.asarray(e, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 2:
        raise ValueError(f"{name} must have shape (M >= 1, K >= 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} entries must be finite")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} entries must be non-negative")
    return arr


def check_one_hot(y, num_classes: int, name: str = "label") -> np.ndarray:
    """Validate a one-hot label vector: exactly one entry equals 1."""
    arr = np.asarray(y, dtype=float)
    if arr.shape != (num_classes,):
        raise ValueError(
            f"{name} must have shape ({num_classes},), got {arr.shape}"
        )
    if not np.all((arr == 0.0) | (arr == 1.0)) or arr.sum() != 1.0:
        raise ValueError(f"{name} must be one-hot (exactly one entry = 1)")
    return arr


def check_probability_vector(p, name: str = "probs", tol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector on the simplex."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError(f"{name} entries must be finite and non-negative")
    if abs(arr.sum() - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1, got {arr.sum()!r}")
    return arr


def check_features(x, dim: int | None = None, name: str = "features") -> np.ndarray:
    """Validate a feature matrix (or single vector promoted to a 1-row matrix)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[1]}, expected {dim}")
    return arr


def check_labels(y, num_classes: int | None = None, name: str = "labels") -> np.ndarray:
    """Validate an integer label vector, optionally bounded by a class count."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError(f"{name} must be integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} must be non-negative")
    if num_classes is not None and arr.size and arr.max() >= num_classes:
        raise ValueError(f"{name} contain a value >= num_classes ({num_classes})")
    return arr
