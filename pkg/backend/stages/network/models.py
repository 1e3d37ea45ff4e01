# backend/stages/network/models.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from common.errors import NetworkShapeError
from stages.voxel.models import VoxelField

# (C, nx, ny, nz) float64 activations
Tensor4 = np.ndarray

# Stage outputs and training targets share the voxel-field type. Predictions are
# unbounded; the readout takes its argmax on the raw activations.
PoseHeatmaps3D = VoxelField

Activation = Literal["relu", "identity"]
InputMode = Literal["audio_visual", "audio_only", "visual_only"]


class NetworkSpec(BaseModel):
    """Architecture of a PoseNet. Widths are config-driven; the defaults are toy scale."""
    model_config = ConfigDict(frozen=True)

    n_landmarks: PositiveInt = 1
    n_stages: PositiveInt = 6
    stem_widths: Tuple[PositiveInt, ...] = (8, 8, 8)
    stage_widths: Tuple[PositiveInt, ...] = (16, 16, 16)
    kernel_size: Literal[1, 3] = 3
    audio_in_channels: PositiveInt = 1
    inputs: InputMode = "audio_visual"

    @field_validator("stem_widths")
    @classmethod
    def _stem(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v:
            raise ValueError("stem_widths needs at least one layer")
        return v

    @property
    def uses_audio(self) -> bool:
        return self.inputs != "visual_only"

    @property
    def uses_visual(self) -> bool:
        return self.inputs != "audio_only"

    @property
    def feature_channels(self) -> int:
        """Channels after max fusion and concatenation with the visual encoding."""
        audio = self.stem_widths[-1] if self.uses_audio else 0
        visual = self.n_landmarks if self.uses_visual else 0
        return audio + visual

    def stage_in_channels(self, stage: int) -> int:
        return self.feature_channels + (self.n_landmarks if stage > 0 else 0)


@dataclass
class Conv3Layer:
    """
    Same-padded stride-1 3D cross-correlation.
    weights: (out, in, k, k, k); bias: (out,). Parameters are mutated in place by SGD.
    """
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = "relu"

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        w = self.weights
        if w.ndim != 5 or w.shape[2] != w.shape[3] or w.shape[3] != w.shape[4] or w.shape[2] not in (1, 3):
            raise NetworkShapeError(f"weights must be (out, in, k, k, k) with k in {{1, 3}}, got {w.shape}")
        if self.bias.shape != (w.shape[0],):
            raise NetworkShapeError(f"bias shape {self.bias.shape} does not match {w.shape[0]} outputs")
        if self.activation not in ("relu", "identity"):
            raise NetworkShapeError(f"unknown activation {self.activation!r}")

    @property
    def out_channels(self) -> int:
        return int(self.weights.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.weights.shape[1])

    @property
    def kernel_size(self) -> int:
        return int(self.weights.shape[2])

    @property
    def n_parameters(self) -> int:
        return int(self.weights.size + self.bias.size)


@dataclass
class PoseNet:
    """
    Audio stem (per pair, then max across pairs) → concat visual → S stage blocks.
    Stage t > 0 consumes the fused features plus stage t-1's N-channel output.
    """
    spec: NetworkSpec
    stem: List[Conv3Layer]
    stages: List[List[Conv3Layer]]
    learning_rate: float = 0.01
    rng_seed: int = 0

    def layers(self) -> Iterator[Tuple[str, Conv3Layer]]:
        """Every layer with a stable name, stem first; checkpoints and gradients use this order."""
        for i, layer in enumerate(self.stem):
            yield f"stem.{i}", layer
        for s, block in enumerate(self.stages):
            for i, layer in enumerate(block):
                yield f"stage{s}.{i}", layer

    @property
    def n_parameters(self) -> int:
        return sum(layer.n_parameters for _, layer in self.layers())


Gradients = List[Tuple[np.ndarray, np.ndarray]]


class TrainingSample(NamedTuple):
    audio: Sequence[VoxelField]
    visual: Optional[VoxelField]
    target: VoxelField


@dataclass
class ForwardCache:
    """Activations kept for the backward pass; acts[0] is the layer-0 input."""
    stem_acts: List[List[Tensor4]] = field(default_factory=list)
    winner: Optional[np.ndarray] = None
    features: Optional[Tensor4] = None
    stage_acts: List[List[Tensor4]] = field(default_factory=list)


class TrainingLog(BaseModel):
    model_config = ConfigDict(frozen=True)

    losses: List[float] = Field(default_factory=list)
    learning_rate: float
    seed: int

    @model_validator(mode="after")
    def _finite(self) -> "TrainingLog":
        if not all(np.isfinite(x) for x in self.losses):
            raise ValueError("training log holds a non-finite loss")
        return self

    @property
    def epochs(self) -> List[int]:
        return list(range(1, len(self.losses) + 1))
