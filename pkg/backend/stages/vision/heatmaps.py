# backend/stages/vision/heatmaps.py
"""
2D landmark likelihoods and their inverse projection into the voxel grid:
each voxel takes the heatmap value at the pixel it projects to.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from common.errors import HeatmapError
from stages.vision.camera import Pixel, project_points
from stages.vision.models import Camera, Heatmap2D
from stages.voxel.models import VoxelField, VoxelGrid


def gaussian_heatmap(landmarks: Sequence[Optional[Pixel]], sigma_px: float, width: int, height: int) -> Heatmap2D:
    """
    Channel i at pixel (x, y) = exp(−‖(x, y) − landmark_i‖² / 2σ²).
    Undetected landmarks (None) give an all-zero channel.
    """
    if sigma_px <= 0:
        raise HeatmapError(f"sigma must be positive, got {sigma_px}")
    if not landmarks:
        raise HeatmapError("gaussian_heatmap needs at least one landmark")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    channels = []
    for lm in landmarks:
        if lm is None:
            channels.append(np.zeros((height, width)))
            continue
        u, v = lm
        channels.append(np.exp(-((xs - u) ** 2 + (ys - v) ** 2) / (2.0 * sigma_px**2)))
    return Heatmap2D(values=np.stack(channels))


def sample_visual(hm: Heatmap2D, cam: Camera, points: np.ndarray) -> np.ndarray:
    """
    Bilinear heatmap lookup at the projections of arbitrary 3D points, shape (N, M).
    Points behind the camera read 0. The image is zero-padded: projections within a
    pixel of the border blend with 0 and farther ones read 0.
    """
    uv, valid = project_points(cam, points)
    out = np.zeros((hm.n_landmarks, uv.shape[0]))
    if not np.any(valid):
        return out
    coords = np.stack([uv[valid, 1], uv[valid, 0]])
    for c in range(hm.n_landmarks):
        out[c, valid] = ndimage.map_coordinates(hm.values[c], coords, order=1, mode="grid-constant", cval=0.0)
    return out


def encode_visual(hm: Heatmap2D, cam: Camera, grid: VoxelGrid) -> VoxelField:
    """N-channel field: channel i at voxel center X = p_i(Π X)."""
    centers = grid.centers().reshape(-1, 3)
    values = sample_visual(hm, cam, centers)
    return VoxelField(
        grid=grid,
        values=values.reshape(hm.n_landmarks, *grid.dims),
        metadata={"kind": "visual"},
    )
