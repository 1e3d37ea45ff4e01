# backend/stages/network/targets.py
from __future__ import annotations

from typing import List, Sequence

import numpy as np

from common.arrays import as_vec3
from common.errors import HeatmapError
from stages.network.models import PoseHeatmaps3D
from stages.voxel.fusion import grid_argmax
from stages.voxel.models import VoxelField, VoxelGrid


def make_target(landmarks3d: Sequence[Sequence[float]], grid: VoxelGrid, sigma_m: float) -> PoseHeatmaps3D:
    """Channel i = exp(−‖X − landmark_i‖² / 2σ²) at every voxel center X."""
    if sigma_m <= 0:
        raise HeatmapError(f"target sigma must be positive, got {sigma_m}")
    if len(landmarks3d) == 0:
        raise HeatmapError("make_target needs at least one landmark")
    centers = grid.centers()
    channels = []
    for lm in landmarks3d:
        d2 = np.sum((centers - as_vec3(lm, "landmark")) ** 2, axis=-1)
        channels.append(np.exp(-d2 / (2.0 * sigma_m**2)))
    return VoxelField(grid=grid, values=np.stack(channels), metadata={"kind": "target", "sigma_m": sigma_m})


def readout(pred: PoseHeatmaps3D) -> List[np.ndarray]:
    """Per-landmark 3D estimate: voxel center of each channel's argmax, taken on the raw predictions."""
    return [grid_argmax(pred, c)[1] for c in range(pred.n_channels)]
