# backend/stages/signals/chirp.py
from __future__ import annotations

from typing import List

import numpy as np
from scipy import signal

from common.errors import SignalError
from stages.signals.models import ChirpSpec, FdmPlan, Waveform


def gen_chirp(spec: ChirpSpec, sample_rate_hz: float) -> Waveform:
    """
    Linear sweep, phase 0 at t = 0:
        x[n] = A · sin(2π (f0 t + ½ (f1 - f0) / T · t²)),  t = n / fs
    Length is round(T · fs).
    """
    if sample_rate_hz <= 0:
        raise SignalError(f"sample rate must be positive, got {sample_rate_hz}")
    if spec.duration_s <= 0:
        raise SignalError(f"chirp duration must be positive, got {spec.duration_s} s")
    nyquist = sample_rate_hz / 2.0
    if not (0.0 < spec.f_start_hz <= spec.f_end_hz < nyquist):
        raise SignalError(
            f"chirp {spec.f_start_hz}-{spec.f_end_hz} Hz violates Nyquist at {sample_rate_hz} Hz "
            f"(must satisfy 0 < f_start <= f_end < {nyquist})"
        )

    n = int(round(spec.duration_s * sample_rate_hz))
    if n < 1:
        raise SignalError(f"chirp of {spec.duration_s} s is shorter than one sample at {sample_rate_hz} Hz")
    t = np.arange(n) / sample_rate_hz
    # scipy's linear chirp is cos(phase + phi); phi = -90° turns it into sin(phase)
    sweep = signal.chirp(t, f0=spec.f_start_hz, t1=spec.duration_s, f1=spec.f_end_hz, method="linear", phi=-90)
    return Waveform(samples=spec.amplitude * sweep, sample_rate_hz=sample_rate_hz)


def fdm_partition(f_lo_hz: float, f_hi_hz: float, n_speakers: int, guard_hz: float = 0.0) -> FdmPlan:
    """
    Split [f_lo, f_hi] into equal-width bands, trimming guard/2 from both edges of each.
    """
    if n_speakers < 1:
        raise SignalError(f"need at least one speaker, got {n_speakers}")
    if guard_hz < 0:
        raise SignalError(f"guard must be nonnegative, got {guard_hz} Hz")
    width = f_hi_hz - f_lo_hz
    if width <= n_speakers * guard_hz:
        raise SignalError(
            f"band {f_lo_hz}-{f_hi_hz} Hz is too narrow for {n_speakers} speakers with {guard_hz} Hz guards"
        )

    step = width / n_speakers
    bands = []
    for i in range(n_speakers):
        lo = f_lo_hz + i * step + guard_hz / 2.0
        hi = f_lo_hz + (i + 1) * step - guard_hz / 2.0
        if i == n_speakers - 1 and guard_hz == 0.0:
            hi = f_hi_hz  # exact upper edge, no rounding drift
        bands.append((lo, hi))
    return FdmPlan(f_lo_hz=f_lo_hz, f_hi_hz=f_hi_hz, bands=bands, guard_hz=guard_hz)


def band_chirps(plan: FdmPlan, duration_s: float, amplitude: float, sample_rate_hz: float) -> List[Waveform]:
    """One chirp per speaker sweeping that speaker's band."""
    return [
        gen_chirp(ChirpSpec(f_start_hz=lo, f_end_hz=hi, duration_s=duration_s, amplitude=amplitude), sample_rate_hz)
        for lo, hi in plan.bands
    ]
