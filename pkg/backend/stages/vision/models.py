# backend/stages/vision/models.py
from __future__ import annotations

from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveFloat, PositiveInt, field_validator

from common.arrays import Vec3, frozen_array, require_finite

Matrix3 = Tuple[Vec3, Vec3, Vec3]

_IDENTITY: Matrix3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class Camera(BaseModel):
    """
    Pinhole camera. `rotation` and `translation` map world to camera:
    X_c = R · X + t, with +z forward and +y pointing down the image.
    """
    model_config = ConfigDict(frozen=True)

    fx: PositiveFloat
    fy: PositiveFloat
    cx: float
    cy: float
    rotation: Matrix3 = _IDENTITY
    translation: Vec3 = (0.0, 0.0, 0.0)
    width: PositiveInt = 640
    height: PositiveInt = 480

    @field_validator("rotation")
    @classmethod
    def _orthonormal(cls, v: Matrix3) -> Matrix3:
        r = np.asarray(v, dtype=np.float64)
        if r.shape != (3, 3) or not np.all(np.isfinite(r)):
            raise ValueError(f"rotation must be a finite 3×3 matrix, got shape {r.shape}")
        if not np.allclose(r @ r.T, np.eye(3), rtol=0.0, atol=1e-9):
            raise ValueError("rotation is not orthonormal within 1e-9")
        return v

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=np.float64)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t


class Heatmap2D(BaseModel):
    """Per-landmark image likelihoods, values shape (N, H, W) within [0, 1]."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        arr = require_finite(frozen_array(arr, ndim=3), "heatmap values")
        if arr.shape[0] < 1:
            raise ValueError("a heatmap needs at least one landmark channel")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"heatmap values must lie in [0, 1], found [{arr.min()}, {arr.max()}]")
        return arr

    @property
    def n_landmarks(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])
