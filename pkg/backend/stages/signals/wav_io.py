# backend/stages/signals/wav_io.py
from __future__ import annotations

import logging
from pathlib import Path
from typing import Union

import numpy as np
from scipy.io import wavfile

from common.errors import WavFormatError
from stages.signals.models import Waveform

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_PCM16_SCALE = 32768.0


def write_wav(path: PathLike, w: Waveform) -> Path:
    """
    Mono RIFF/WAVE, format code 3 (IEEE float, 32-bit little-endian).
    Samples are stored as float32, so a float32-valued waveform round-trips bit-exactly.
    """
    rate = w.sample_rate_hz
    if rate != int(rate):
        raise WavFormatError(f"WAV needs an integer sample rate, got {rate} Hz")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(p), int(rate), w.samples.astype("<f4"))
    logger.debug("wrote %s (%d samples @ %d Hz)", p, len(w), int(rate))
    return p


def read_wav(path: PathLike) -> Waveform:
    """
    Read a mono WAV. IEEE float is taken as is; PCM16 is scaled by 1/32768 into [-1, 1).
    Any other format code or sample width is rejected.
    """
    p = Path(path)
    try:
        rate, data = wavfile.read(str(p))
    except (ValueError, EOFError) as e:
        # scipy reports both a bad RIFF header and an unknown format code as ValueError
        raise WavFormatError(f"{p}: unreadable or unsupported WAV ({e})") from e

    if data.ndim != 1:
        raise WavFormatError(f"{p}: expected mono audio, found {data.shape[1]} channels")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{p}: unsupported sample format {data.dtype} (only IEEE float and PCM16 are read)")

    return Waveform(samples=samples, sample_rate_hz=float(rate))
