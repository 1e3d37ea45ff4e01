# backend/common/errors.py
from __future__ import annotations


class PoseKernelError(Exception):
    """Base class for every error raised by the pose-kernel pipeline."""
    pass


class ConfigError(PoseKernelError):
    """Experiment or scene configuration failed validation."""
    pass


class SignalError(PoseKernelError):
    """Invalid waveform, chirp or band-plan request."""
    pass


class WavFormatError(SignalError):
    """Malformed RIFF file or a sample format we do not read."""
    pass


class RoomSimError(PoseKernelError):
    """Scene geometry the simulator cannot render (co-located endpoints, bad indices)."""
    pass


class DeconvolutionError(PoseKernelError):
    """Silent source or mismatched recordings during kernel recovery."""
    pass


class MissingCalibrationError(DeconvolutionError):
    """Empty-room recording absent for a pair that has a full recording."""
    pass


class VoxelError(PoseKernelError):
    """Invalid grid or field operation."""
    pass


class GridMismatchError(VoxelError):
    """Fields that must share a grid do not."""
    pass


class FieldFormatError(VoxelError):
    """Corrupt or unsupported PKVX / PKHM / CSV field file."""
    pass


class HeatmapError(PoseKernelError):
    """Invalid 2D heatmap or camera."""
    pass


class NetworkShapeError(PoseKernelError):
    """Channel or spatial shape mismatch inside the 3D network."""
    pass


class TrainingDivergedError(PoseKernelError):
    """Loss became non-finite during SGD."""
    pass


class CheckpointError(PoseKernelError):
    """PKNN checkpoint is corrupt or does not match the configured network."""
    pass
