"""Input checks shared by the engines and estimators."""
from __future__ import annotations

import os

import numpy as np
from sklearn.utils import check_array

DEFAULT_MAX_DEPTH = 10


class ModelError(ValueError):
    """Raised when a model document or tree structure is invalid."""


class DepthCapError(ValueError):
    """Raised when a tree is deeper than the configured depth cap."""


def max_depth_cap() -> int:
    raw = os.environ.get("GLEX_MAX_DEPTH")
    if raw is None or raw == "":
        return DEFAULT_MAX_DEPTH
    cap = int(raw)
    if cap < 1:
        raise ValueError("GLEX_MAX_DEPTH must be a positive integer")
    return cap


def check_rows(X, n_features: int | None = None, *, name: str = "X") -> np.ndarray:
    """Return ``X`` as a finite 2-d float64 array, optionally checking its width."""
    arr = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=1,
                      input_name=name)
    if n_features is not None and arr.shape[1] != n_features:
        raise ValueError(
            f"{name} has {arr.shape[1]} columns but the model expects {n_features}"
        )
    return arr


def check_row(x, n_features: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != n_features:
        raise ValueError(f"expected a vector of length {n_features}, got shape {arr.shape}")
    return arr
