# backend/stages/kernel/models.py
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DeconvConfig(BaseModel):
    """
    Regularized deconvolution settings.

    epsilon: absolute Wiener regularizer; when None it is epsilon_rel · max|S(f)|².
    output_taps: kernel length; when None it is resolved from the scene (see for_scene in
    stages.kernel.deconvolve), or every causal lag when no scene is at hand.
    Band edges must sit below Nyquist; that is checked against the signal's rate.
    """
    model_config = ConfigDict(frozen=True)

    epsilon: Optional[float] = Field(default=None, ge=0.0)
    epsilon_rel: float = Field(default=1e-3, ge=0.0)
    band_lo_hz: float = Field(default=19_000.0, ge=0.0)
    band_hi_hz: float = Field(default=32_000.0, gt=0.0)
    output_taps: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _band(self) -> "DeconvConfig":
        if self.band_lo_hz >= self.band_hi_hz:
            raise ValueError(f"analysis band is empty: {self.band_lo_hz}-{self.band_hi_hz} Hz")
        return self

    def with_band(self, lo_hz: float, hi_hz: float) -> "DeconvConfig":
        return self.model_copy(update={"band_lo_hz": lo_hz, "band_hi_hz": hi_hz})
