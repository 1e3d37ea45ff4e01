# backend/common/arrays.py
from __future__ import annotations

from typing import Any, Sequence, Tuple

import numpy as np

Vec3 = Tuple[float, float, float]


def frozen_array(value: Any, dtype: Any = np.float64, ndim: int | None = None) -> np.ndarray:
    """
    Copy `value` into a read-only ndarray of the given dtype.
    Models hold these so a constructed value cannot be mutated behind its validators.
    """
    arr = np.array(value, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def require_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be finite (found NaN/Inf)")
    return arr


def as_vec3(value: Sequence[float], what: str = "point") -> np.ndarray:
    v = np.asarray(value, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{what} must have 3 coordinates, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} must be finite, got {v.tolist()}")
    return v
