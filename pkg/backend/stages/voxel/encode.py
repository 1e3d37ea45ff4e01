# backend/stages/voxel/encode.py
"""
Spatial encoding of a pose kernel: every voxel center X takes the kernel value at
its arrival time t_X = (‖s_spk − X‖ + ‖s_mic − X‖) / v. A single impulse therefore
paints an ellipsoidal shell whose foci are the speaker and the microphone.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from common.arrays import as_vec3
from common.errors import VoxelError
from stages.kernel.deconvolve import envelope
from stages.roomsim.models import ImpulseResponse
from stages.voxel.models import VoxelField, VoxelGrid


def arrival_time(
    X: Sequence[float], s_spk: Sequence[float], s_mic: Sequence[float], v: float
) -> float:
    """Speaker → X → microphone travel time in seconds."""
    if v <= 0:
        raise VoxelError(f"speed of sound must be positive, got {v}")
    x = as_vec3(X, "X")
    return float((np.linalg.norm(as_vec3(s_spk, "s_spk") - x) + np.linalg.norm(as_vec3(s_mic, "s_mic") - x)) / v)


def distance_sums(grid: VoxelGrid, s_spk: Sequence[float], s_mic: Sequence[float]) -> np.ndarray:
    """‖s_spk − X‖ + ‖s_mic − X‖ at every voxel center, shape (nx, ny, nz)."""
    centers = grid.centers()
    d_spk = np.linalg.norm(centers - as_vec3(s_spk, "s_spk"), axis=-1)
    d_mic = np.linalg.norm(centers - as_vec3(s_mic, "s_mic"), axis=-1)
    return d_spk + d_mic


def arrival_times(grid: VoxelGrid, s_spk: Sequence[float], s_mic: Sequence[float], v: float) -> np.ndarray:
    if v <= 0:
        raise VoxelError(f"speed of sound must be positive, got {v}")
    return distance_sums(grid, s_spk, s_mic) / v


def encode_kernel(
    k: ImpulseResponse,
    s_spk: Sequence[float],
    s_mic: Sequence[float],
    v: float,
    grid: VoxelGrid,
    use_envelope: bool = False,
) -> VoxelField:
    """
    One-channel field of k sampled at each voxel's arrival time, linearly
    interpolated between taps; negative times and times past the last tap give 0.
    """
    if len(k) == 0:
        raise VoxelError("cannot encode an empty kernel")
    source = envelope(k) if use_envelope else k
    positions = arrival_times(grid, s_spk, s_mic, v) * k.sample_rate_hz
    values = np.interp(positions.ravel(), np.arange(len(source)), source.taps, left=0.0, right=0.0)
    return VoxelField(
        grid=grid,
        values=values.reshape(grid.dims),
        metadata={"kind": "audio", "envelope": bool(use_envelope)},
    )
