# backend/stages/roomsim/models.py
from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

from common.arrays import Vec3, frozen_array, require_finite
from common.config_loader import SAMPLE_RATE_HZ, SPEED_OF_SOUND_MPS

Pair = Tuple[int, int]  # (speaker index, microphone index)


class Room(BaseModel):
    """Shoebox [0, x] × [0, y] × [0, z] in meters with one wall reflection coefficient."""
    model_config = ConfigDict(frozen=True)

    dims: Vec3
    beta: float = Field(default=0.5, ge=0.0, le=1.0)

    @field_validator("dims")
    @classmethod
    def _positive(cls, v: Vec3) -> Vec3:
        if any(not np.isfinite(d) or d <= 0 for d in v):
            raise ValueError(f"room extents must be positive, got {v}")
        return v

    def contains(self, p: Vec3) -> bool:
        return all(0.0 < c < d for c, d in zip(p, self.dims))

    @property
    def diagonal_m(self) -> float:
        return float(np.linalg.norm(self.dims))


class Scene(BaseModel):
    """Metric placement of speakers and microphones, optionally inside a room."""
    model_config = ConfigDict(frozen=True)

    room: Optional[Room] = None
    speakers: List[Vec3]
    microphones: List[Vec3]
    speed_of_sound_mps: PositiveFloat = SPEED_OF_SOUND_MPS
    image_order: int = Field(default=1, ge=0)
    sample_rate_hz: PositiveFloat = SAMPLE_RATE_HZ

    @model_validator(mode="after")
    def _inside(self) -> "Scene":
        if not self.speakers or not self.microphones:
            raise ValueError("a scene needs at least one speaker and one microphone")
        for kind, points in (("speaker", self.speakers), ("microphone", self.microphones)):
            for i, p in enumerate(points):
                if not all(np.isfinite(c) for c in p):
                    raise ValueError(f"{kind} {i} position is not finite: {p}")
                if self.room is not None and not self.room.contains(p):
                    raise ValueError(f"{kind} {i} at {p} is not strictly inside the room {self.room.dims}")
        return self

    def speaker(self, i: int) -> np.ndarray:
        return np.asarray(self.speakers[i], dtype=np.float64)

    def microphone(self, j: int) -> np.ndarray:
        return np.asarray(self.microphones[j], dtype=np.float64)

    def all_pairs(self) -> List[Pair]:
        return [(i, j) for i in range(len(self.speakers)) for j in range(len(self.microphones))]

    def matched_pairs(self) -> List[Pair]:
        """Speaker i with microphone i, for as many as both lists allow."""
        return [(i, i) for i in range(min(len(self.speakers), len(self.microphones)))]


class Reflector(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: Vec3
    gain: float = 1.0

    @model_validator(mode="after")
    def _finite(self) -> "Reflector":
        if not all(np.isfinite(c) for c in self.position) or not np.isfinite(self.gain):
            raise ValueError(f"reflector must be finite, got {self.position} / {self.gain}")
        return self


class ReflectorCloud(BaseModel):
    """Point reflectors with gains A(X); the simulated stand-in for a body surface."""
    model_config = ConfigDict(frozen=True)

    points: List[Reflector] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


class ImpulseResponse(BaseModel):
    """Tapped delay line: tap n is time n / sample_rate_hz."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    taps: np.ndarray
    sample_rate_hz: PositiveFloat = SAMPLE_RATE_HZ

    @field_validator("taps", mode="before")
    @classmethod
    def _taps(cls, v):
        return require_finite(frozen_array(np.asarray(v, dtype=np.float64).reshape(-1)), "impulse response taps")

    def __len__(self) -> int:
        return int(self.taps.size)

    def energy(self) -> float:
        return float(np.sum(self.taps**2))

    def padded(self, n: int) -> np.ndarray:
        """Taps zero-padded (never truncated) to at least n samples."""
        out = np.zeros(max(n, len(self)))
        out[: len(self)] = self.taps
        return out
