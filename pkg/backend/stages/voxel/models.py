# backend/stages/voxel/models.py
from __future__ import annotations

import math
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

from common.arrays import Vec3, frozen_array, require_finite

Index3 = Tuple[int, int, int]


class VoxelGrid(BaseModel):
    """
    Regular metric lattice. Voxel (i, j, k) is centered at
    origin + cell_m · (i + ½, j + ½, k + ½); origin is the min corner.
    Linear order everywhere is x-fastest: i + nx · (j + ny · k).
    """
    model_config = ConfigDict(frozen=True)

    origin: Vec3 = (0.0, 0.0, 0.0)
    cell_m: PositiveFloat = 0.05
    dims: Index3 = (70, 70, 50)

    @field_validator("dims", mode="before")
    @classmethod
    def _dims(cls, v: Any) -> Any:
        dims = tuple(v) if isinstance(v, (list, tuple)) else v
        if isinstance(dims, tuple):
            for d in dims:
                whole = isinstance(d, (int, np.integer)) or (isinstance(d, float) and d.is_integer())
                if isinstance(d, bool) or not whole:
                    raise ValueError(f"grid dims must be whole numbers, got {v}")
                if d < 1:
                    raise ValueError(f"grid dims must be positive, got {v}")
            return tuple(int(d) for d in dims)
        return dims

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_diagonal_m(self) -> float:
        return self.cell_m * math.sqrt(3.0)

    @property
    def extent_m(self) -> Vec3:
        return tuple(d * self.cell_m for d in self.dims)

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.cell_m * (np.arange(self.dims[axis]) + 0.5)

    def centers(self) -> np.ndarray:
        """Voxel centers, shape (nx, ny, nz, 3)."""
        xs, ys, zs = (self.axis_centers(a) for a in range(3))
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def center(self, index: Index3) -> np.ndarray:
        return np.asarray(self.origin) + self.cell_m * (np.asarray(index, dtype=np.float64) + 0.5)

    def index_of(self, point) -> Optional[Index3]:
        """Index of the voxel containing `point`, or None outside the grid."""
        rel = (np.asarray(point, dtype=np.float64) - np.asarray(self.origin)) / self.cell_m
        idx = np.floor(rel).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            return None
        return tuple(int(i) for i in idx)

    def contains(self, point) -> bool:
        return self.index_of(point) is not None


class VoxelField(BaseModel):
    """C scalar lattices over one grid; values shape (C, nx, ny, nz)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: VoxelGrid
    values: np.ndarray
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        return require_finite(frozen_array(arr, ndim=4), "voxel field values")

    @model_validator(mode="after")
    def _shape(self) -> "VoxelField":
        if self.values.shape[0] < 1:
            raise ValueError("a voxel field needs at least one channel")
        if tuple(self.values.shape[1:]) != tuple(self.grid.dims):
            raise ValueError(f"values shape {self.values.shape[1:]} does not match grid dims {self.grid.dims}")
        return self

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[0])

    def channel(self, c: int) -> np.ndarray:
        return self.values[c]
