# backend/stages/kernel/deconvolve.py
"""
Pose-kernel recovery.

    K(f) = R(f) / S(f) - K̄(f)

The division is replaced by a band-masked Wiener estimate R·conj(S) / (|S|² + ε),
and the empty-room term is subtracted in the time domain after both recordings
have been deconvolved (identical by linearity of the inverse DFT).
"""
from __future__ import annotations

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy import signal

from common.errors import DeconvolutionError
from stages.kernel.models import DeconvConfig
from stages.roomsim.models import ImpulseResponse, Scene
from stages.signals.models import Waveform
from stages.signals.spectral import next_pow2

logger = logging.getLogger(__name__)

_SILENCE_ENERGY = 1e-12


def _band_mask(size: int, fs: float, lo_hz: float, hi_hz: float) -> np.ndarray:
    if hi_hz > fs / 2.0:
        raise DeconvolutionError(f"analysis band upper edge {hi_hz} Hz exceeds Nyquist ({fs / 2.0} Hz)")
    f = np.fft.rfftfreq(size, d=1.0 / fs)
    return (f >= lo_hz) & (f <= hi_hz)


def deconvolve(received: Waveform, source: Waveform, cfg: DeconvConfig) -> ImpulseResponse:
    """
    Impulse response h with received ≈ source * h, restricted to [band_lo, band_hi]
    and truncated to cfg.output_taps. Real by construction (real-input transforms).
    """
    if received.sample_rate_hz != source.sample_rate_hz:
        raise DeconvolutionError(
            f"rate mismatch: received {received.sample_rate_hz} Hz vs source {source.sample_rate_hz} Hz"
        )
    fs = received.sample_rate_hz
    # room for every positive lag plus the negative lags of the cross-correlation
    size = next_pow2(len(received) + len(source) - 1)
    mask = _band_mask(size, fs, cfg.band_lo_hz, cfg.band_hi_hz)

    R = np.fft.rfft(received.samples, n=size)
    S = np.fft.rfft(source.samples, n=size)
    power = np.abs(S) ** 2

    in_band = float(np.sum(power[mask])) / size
    if in_band < _SILENCE_ENERGY:
        raise DeconvolutionError(
            f"source is silent in {cfg.band_lo_hz}-{cfg.band_hi_hz} Hz (in-band energy {in_band:.3e})"
        )

    eps = cfg.epsilon if cfg.epsilon is not None else cfg.epsilon_rel * float(np.max(power))
    denom = power + eps
    H = np.zeros_like(R)
    ok = mask & (denom > 0.0)
    H[ok] = R[ok] * np.conj(S[ok]) / denom[ok]

    h = np.fft.irfft(H, n=size)
    n_taps = cfg.output_taps if cfg.output_taps is not None else len(received)
    taps = np.zeros(n_taps)
    keep = min(n_taps, size)
    taps[:keep] = h[:keep]
    return ImpulseResponse(taps=taps, sample_rate_hz=fs)


def extract_pose_kernel(full: ImpulseResponse, empty: ImpulseResponse) -> ImpulseResponse:
    """k = (full response) − (empty-room response), shorter one zero-padded."""
    if full.sample_rate_hz != empty.sample_rate_hz:
        raise DeconvolutionError(
            f"rate mismatch: full {full.sample_rate_hz} Hz vs empty {empty.sample_rate_hz} Hz"
        )
    n = max(len(full), len(empty))
    return ImpulseResponse(taps=full.padded(n) - empty.padded(n), sample_rate_hz=full.sample_rate_hz)


def extract_pair_kernel(
    full: Waveform, empty: Waveform, source: Waveform, cfg: DeconvConfig
) -> ImpulseResponse:
    """Deconvolve the with-body and empty-room recordings against one source, then subtract."""
    return extract_pose_kernel(deconvolve(full, source, cfg), deconvolve(empty, source, cfg))


def envelope(k: ImpulseResponse) -> ImpulseResponse:
    """Magnitude of the analytic signal (negative frequencies zeroed, positive doubled)."""
    if len(k) == 0:
        raise DeconvolutionError("envelope of an empty impulse response")
    return ImpulseResponse(taps=np.abs(signal.hilbert(k.taps)), sample_rate_hz=k.sample_rate_hz)


def band_limit(
    ir: ImpulseResponse, band_lo_hz: float, band_hi_hz: float, size: Optional[int] = None
) -> ImpulseResponse:
    """Project `ir` onto the analysis band with the same bin mask deconvolve uses."""
    n = len(ir)
    size = size or next_pow2(2 * max(n, 1))
    if size < n:
        raise DeconvolutionError(f"band_limit size {size} shorter than the response ({n} taps)")
    mask = _band_mask(size, ir.sample_rate_hz, band_lo_hz, band_hi_hz)
    spec = np.fft.rfft(ir.taps, n=size) * mask
    return ImpulseResponse(taps=np.fft.irfft(spec, n=size)[:n], sample_rate_hz=ir.sample_rate_hz)


def band_correlation(a: ImpulseResponse, b: ImpulseResponse, band_lo_hz: float, band_hi_hz: float) -> float:
    """Normalized correlation of the band-limited projections of a and b (0 if either is silent)."""
    n = max(len(a), len(b))
    size = next_pow2(2 * max(n, 1))
    pa = band_limit(ImpulseResponse(taps=a.padded(n), sample_rate_hz=a.sample_rate_hz), band_lo_hz, band_hi_hz, size)
    pb = band_limit(ImpulseResponse(taps=b.padded(n), sample_rate_hz=b.sample_rate_hz), band_lo_hz, band_hi_hz, size)
    na, nb = np.linalg.norm(pa.taps), np.linalg.norm(pb.taps)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(pa.taps, pb.taps) / (na * nb))


def default_output_taps(scene: Scene) -> int:
    """Taps covering every physical delay: 2 × room diagonal (free space: widest pair + 2 m)."""
    if scene.room is not None:
        path = 2.0 * scene.room.diagonal_m
    else:
        widest = max(
            float(np.linalg.norm(scene.speaker(i) - scene.microphone(j))) for i, j in scene.all_pairs()
        )
        path = widest + 2.0
    return int(math.ceil(path / scene.speed_of_sound_mps * scene.sample_rate_hz))


def peak_delay(k: ImpulseResponse, speed_of_sound_mps: float) -> Tuple[int, float]:
    """Envelope peak tap and the speaker→reflector→microphone path length it implies."""
    env = envelope(k)
    idx = int(np.argmax(env.taps))
    return idx, idx / k.sample_rate_hz * speed_of_sound_mps


def for_scene(cfg: DeconvConfig, scene: Scene) -> DeconvConfig:
    """cfg with an unset output_taps filled in from the room size; explicit lengths are kept."""
    if cfg.output_taps is not None:
        return cfg
    return cfg.model_copy(update={"output_taps": default_output_taps(scene)})
