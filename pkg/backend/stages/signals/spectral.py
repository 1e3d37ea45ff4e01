# backend/stages/signals/spectral.py
"""
DFT analysis, FFT convolution and simple waveform arithmetic.

All transform sizes are powers of two; numpy.fft does the work.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from common.errors import SignalError
from stages.signals.models import Spectrum, Waveform


def next_pow2(n: int) -> int:
    if n < 1:
        raise SignalError(f"next_pow2 needs n >= 1, got {n}")
    return 1 << (int(n) - 1).bit_length()


def _check_rates(a: Waveform, b: Waveform, what: str) -> None:
    if a.sample_rate_hz != b.sample_rate_hz:
        raise SignalError(
            f"{what}: sample-rate mismatch ({a.sample_rate_hz} Hz vs {b.sample_rate_hz} Hz)"
        )


def dft(w: Waveform, size: Optional[int] = None) -> Spectrum:
    """Zero-padded DFT of `w`; size defaults to the next power of two."""
    n = len(w)
    size = next_pow2(n) if size is None else int(size)
    if size < n:
        raise SignalError(f"DFT size {size} is shorter than the waveform ({n} samples)")
    return Spectrum(bins=np.fft.fft(w.samples, n=size), sample_rate_hz=w.sample_rate_hz, source_length=n)


def idft(sp: Spectrum, length: Optional[int] = None) -> Waveform:
    """
    Inverse DFT keeping the real part, truncated to `length`
    (or the originating waveform's length when known).
    """
    out = np.fft.ifft(sp.bins).real
    keep = length if length is not None else (sp.source_length or sp.size)
    return Waveform(samples=out[:keep], sample_rate_hz=sp.sample_rate_hz)


def convolve(a: Waveform, b: Waveform) -> Waveform:
    """Full linear convolution (|a|+|b|-1 samples) via zero-padded real FFTs."""
    _check_rates(a, b, "convolve")
    n = len(a) + len(b) - 1
    size = next_pow2(n)
    spec = np.fft.rfft(a.samples, n=size) * np.fft.rfft(b.samples, n=size)
    return Waveform(samples=np.fft.irfft(spec, n=size)[:n], sample_rate_hz=a.sample_rate_hz)


def mix(waveforms: Sequence[Waveform]) -> Waveform:
    """Sample-wise sum, shorter inputs zero-padded at the end."""
    if not waveforms:
        raise SignalError("mix needs at least one waveform")
    first = waveforms[0]
    for w in waveforms[1:]:
        _check_rates(first, w, "mix")
    out = np.zeros(max(len(w) for w in waveforms))
    for w in waveforms:
        out[: len(w)] += w.samples
    return Waveform(samples=out, sample_rate_hz=first.sample_rate_hz)


def add_noise(w: Waveform, snr_db: Optional[float], rng: np.random.Generator) -> Waveform:
    """Additive white Gaussian noise at `snr_db` relative to the mean power of `w`."""
    if snr_db is None:
        return w
    power = float(np.mean(w.samples**2))
    if power == 0.0:
        return w
    sigma = np.sqrt(power / (10.0 ** (snr_db / 10.0)))
    return Waveform(samples=w.samples + rng.normal(0.0, sigma, size=len(w)), sample_rate_hz=w.sample_rate_hz)
