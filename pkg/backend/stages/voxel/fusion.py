# backend/stages/voxel/fusion.py
from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from common.errors import GridMismatchError, VoxelError
from stages.voxel.models import Index3, VoxelField


def check_same_grid(fields: Sequence[VoxelField], what: str) -> None:
    if not fields:
        raise VoxelError(f"{what} needs at least one field")
    first = fields[0]
    for i, f in enumerate(fields[1:], start=1):
        if f.grid != first.grid:
            raise GridMismatchError(f"{what}: field {i} grid {f.grid} differs from {first.grid}")
        if f.n_channels != first.n_channels:
            raise GridMismatchError(f"{what}: field {i} has {f.n_channels} channels, expected {first.n_channels}")


def fuse_max(fields: Sequence[VoxelField]) -> VoxelField:
    """Element-wise maximum across fields (order-independent)."""
    check_same_grid(fields, "fuse_max")
    out = np.maximum.reduce([f.values for f in fields])
    return VoxelField(grid=fields[0].grid, values=out, metadata={"fusion": "max", "inputs": len(fields)})


def fuse_product(fields: Sequence[VoxelField]) -> VoxelField:
    """Element-wise product of nonnegative fields."""
    check_same_grid(fields, "fuse_product")
    for i, f in enumerate(fields):
        if np.any(f.values < 0):
            raise VoxelError(f"fuse_product: field {i} has negative values (min {f.values.min():.3e})")
    out = np.prod(np.stack([f.values for f in fields]), axis=0)
    return VoxelField(grid=fields[0].grid, values=out, metadata={"fusion": "product", "inputs": len(fields)})


def stack_channels(fields: Sequence[VoxelField]) -> VoxelField:
    if not fields:
        raise VoxelError("stack_channels needs at least one field")
    grid = fields[0].grid
    for i, f in enumerate(fields[1:], start=1):
        if f.grid != grid:
            raise GridMismatchError(f"stack_channels: field {i} grid {f.grid} differs from {grid}")
    return VoxelField(grid=grid, values=np.concatenate([f.values for f in fields], axis=0))


def normalize_field(field: VoxelField) -> VoxelField:
    """Scale each channel so its largest magnitude is 1; all-zero channels stay zero."""
    peak = np.max(np.abs(field.values), axis=(1, 2, 3), keepdims=True)
    scale = np.where(peak > 0, peak, 1.0)
    return VoxelField(grid=field.grid, values=field.values / scale, metadata={**field.metadata, "normalized": True})


def grid_argmax(field: VoxelField, channel: int = 0) -> Tuple[Index3, np.ndarray]:
    """
    Index and metric center of the maximum of one channel.
    Ties resolve to the lowest x-fastest linear index.
    """
    if not (0 <= channel < field.n_channels):
        raise VoxelError(f"channel {channel} out of range (field has {field.n_channels})")
    flat = field.values[channel].ravel(order="F")
    linear = int(np.argmax(flat))
    index = tuple(int(i) for i in np.unravel_index(linear, field.grid.dims, order="F"))
    return index, field.grid.center(index)


def argmax_all(field: VoxelField) -> List[Tuple[Index3, np.ndarray]]:
    return [grid_argmax(field, c) for c in range(field.n_channels)]
