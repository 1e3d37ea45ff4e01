# backend/stages/signals/models.py
from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

from common.arrays import frozen_array, require_finite
from common.config_loader import SAMPLE_RATE_HZ


class Waveform(BaseModel):
    """Sampled real-valued audio signal at a fixed rate (nominal range ±1)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray
    sample_rate_hz: PositiveFloat = SAMPLE_RATE_HZ

    @field_validator("samples", mode="before")
    @classmethod
    def _samples(cls, v):
        arr = frozen_array(np.asarray(v, dtype=np.float64).reshape(-1))
        if arr.size == 0:
            raise ValueError("waveform needs at least one sample")
        return require_finite(arr, "waveform samples")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def energy(self) -> float:
        return float(np.sum(self.samples**2))


class Spectrum(BaseModel):
    """DFT bins of a waveform; `source_length` remembers the unpadded length."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bins: np.ndarray
    sample_rate_hz: PositiveFloat = SAMPLE_RATE_HZ
    source_length: Optional[int] = None

    @field_validator("bins", mode="before")
    @classmethod
    def _bins(cls, v):
        arr = frozen_array(np.asarray(v, dtype=np.complex128).reshape(-1), dtype=np.complex128)
        if arr.size < 1:
            raise ValueError("spectrum needs at least one bin")
        return arr

    @property
    def size(self) -> int:
        return int(self.bins.size)

    def frequencies(self) -> np.ndarray:
        return np.fft.fftfreq(self.size, d=1.0 / self.sample_rate_hz)

    def is_conjugate_symmetric(self, atol: float = 1e-9) -> bool:
        # X[k] == conj(X[N-k]) for every k
        mirrored = np.conj(np.roll(self.bins[::-1], 1))
        return bool(np.allclose(self.bins, mirrored, rtol=0.0, atol=atol))


class ChirpSpec(BaseModel):
    """
    Linear sweep description. Nyquist and duration are checked by gen_chirp,
    since they depend on the synthesis rate.
    """
    f_start_hz: PositiveFloat = 19_000.0
    f_end_hz: PositiveFloat = 32_000.0
    duration_s: float = 0.100
    amplitude: PositiveFloat = 1.0

    @model_validator(mode="after")
    def _ordered(self) -> "ChirpSpec":
        if self.f_start_hz > self.f_end_hz:
            raise ValueError(f"f_start_hz ({self.f_start_hz}) must not exceed f_end_hz ({self.f_end_hz})")
        return self


class FdmPlan(BaseModel):
    """
    One frequency band per speaker, in speaker index order.
    Bands are half-open [lo, hi): with guard_hz = 0 neighbours touch but never overlap.
    """
    model_config = ConfigDict(frozen=True)

    f_lo_hz: PositiveFloat
    f_hi_hz: PositiveFloat
    bands: List[Tuple[float, float]]
    guard_hz: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _disjoint(self) -> "FdmPlan":
        if not self.bands:
            raise ValueError("an FDM plan needs at least one band")
        prev_hi = None
        for lo, hi in self.bands:
            if not (lo < hi):
                raise ValueError(f"band ({lo}, {hi}) is empty")
            if lo < self.f_lo_hz - 1e-9 or hi > self.f_hi_hz + 1e-9:
                raise ValueError(f"band ({lo}, {hi}) leaves the master band ({self.f_lo_hz}, {self.f_hi_hz})")
            if prev_hi is not None and lo < prev_hi:
                raise ValueError(f"band ({lo}, {hi}) overlaps its predecessor ending at {prev_hi}")
            prev_hi = hi
        return self

    @property
    def n_speakers(self) -> int:
        return len(self.bands)

    def band_for(self, speaker: int) -> Tuple[float, float]:
        return self.bands[speaker]
