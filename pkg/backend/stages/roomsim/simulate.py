# backend/stages/roomsim/simulate.py
"""
Ground-truth impulse responses and received signals.

Empty rooms use the image-source method for a shoebox; the body is a cloud of
point reflectors, each adding one delayed, scaled impulse. Fractional delays are
split linearly across the two neighbouring samples.
"""
from __future__ import annotations

import itertools
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from common.errors import RoomSimError
from stages.roomsim.models import ImpulseResponse, Pair, ReflectorCloud, Scene
from stages.signals.models import Waveform
from stages.signals.spectral import add_noise, convolve, mix

logger = logging.getLogger(__name__)

_MIN_SEPARATION_M = 1e-3
_MIN_PATH_M = 0.1

ImageSource = Tuple[np.ndarray, int, float]  # (position, reflection count, path length)


# -------------------------
# Helpers
# -------------------------
def _pair_endpoints(scene: Scene, pair: Pair) -> Tuple[np.ndarray, np.ndarray]:
    spk, mic = pair
    if not (0 <= spk < len(scene.speakers)):
        raise RoomSimError(f"speaker index {spk} out of range (scene has {len(scene.speakers)})")
    if not (0 <= mic < len(scene.microphones)):
        raise RoomSimError(f"microphone index {mic} out of range (scene has {len(scene.microphones)})")
    return scene.speaker(spk), scene.microphone(mic)


def _splat(taps: np.ndarray, delay_samples: float, gain: float) -> bool:
    """Add `gain` at a fractional delay; returns False when it falls past the end."""
    n0 = int(math.floor(delay_samples))
    frac = delay_samples - n0
    if n0 < 0 or n0 + 1 >= taps.size:
        return False
    taps[n0] += gain * (1.0 - frac)
    taps[n0 + 1] += gain * frac
    return True


def _render(delays: Sequence[float], gains: Sequence[float], n_taps: Optional[int], fs: float) -> ImpulseResponse:
    if n_taps is None:
        n_taps = int(math.floor(max(delays))) + 2 if delays else 1
    taps = np.zeros(int(n_taps))
    dropped = 0
    for d, g in zip(delays, gains):
        if not _splat(taps, d, g):
            dropped += 1
    if dropped:
        logger.warning("⚠️ dropped %d taps beyond %d samples", dropped, n_taps)
    return ImpulseResponse(taps=taps, sample_rate_hz=fs)


def _axis_images(x: float, length: float, order: int) -> List[Tuple[float, int]]:
    """1-D image coordinates of x between walls at 0 and `length`, with reflection counts."""
    out = []
    for r in range(-order - 1, order + 2):
        for p in (0, 1):
            count = abs(2 * r - p)
            if count <= order:
                out.append(((1 - 2 * p) * x + 2 * r * length, count))
    return out


# -------------------------
# Image sources
# -------------------------
def image_sources(scene: Scene, pair: Pair) -> List[ImageSource]:
    """
    Every image of the speaker up to scene.image_order reflections, seen from the microphone.
    Without a room only the direct path exists. Sorted by (reflection count, path length).
    """
    spk, mic = _pair_endpoints(scene, pair)
    if np.linalg.norm(spk - mic) < _MIN_SEPARATION_M:
        raise RoomSimError(f"speaker {pair[0]} and microphone {pair[1]} are co-located (< 1 mm apart)")

    if scene.room is None:
        return [(spk, 0, float(np.linalg.norm(spk - mic)))]

    order = scene.image_order
    per_axis = [_axis_images(float(spk[a]), scene.room.dims[a], order) for a in range(3)]
    images: List[ImageSource] = []
    for (x, cx), (y, cy), (z, cz) in itertools.product(*per_axis):
        count = cx + cy + cz
        if count > order:
            continue
        pos = np.array([x, y, z])
        images.append((pos, count, float(np.linalg.norm(pos - mic))))
    images.sort(key=lambda im: (im[1], im[2]))
    return images


def simulate_empty_room(scene: Scene, pair: Pair, n_taps: Optional[int] = None) -> ImpulseResponse:
    """
    Room impulse response k̄ for one pair: one tap per image source,
    delay = path / v, gain = β^reflections / max(path, 0.1 m).
    """
    fs = scene.sample_rate_hz
    beta = scene.room.beta if scene.room is not None else 0.0
    delays, gains = [], []
    for _, count, dist in image_sources(scene, pair):
        gain = (beta**count if count else 1.0) / max(dist, _MIN_PATH_M)
        if gain == 0.0:
            continue
        delays.append(dist / scene.speed_of_sound_mps * fs)
        gains.append(gain)
    return _render(delays, gains, n_taps, fs)


def reflector_taps(scene: Scene, body: ReflectorCloud, pair: Pair) -> List[Tuple[float, float]]:
    """(fractional delay in samples, gain) per reflector; the ground truth behind simulate_pose_kernel."""
    spk, mic = _pair_endpoints(scene, pair)
    fs = scene.sample_rate_hz
    out = []
    for i, refl in enumerate(body.points):
        x = np.asarray(refl.position, dtype=np.float64)
        d_spk = float(np.linalg.norm(spk - x))
        d_mic = float(np.linalg.norm(mic - x))
        if d_spk < _MIN_SEPARATION_M or d_mic < _MIN_SEPARATION_M:
            raise RoomSimError(f"reflector {i} at {refl.position} is within 1 mm of speaker or microphone")
        out.append(((d_spk + d_mic) / scene.speed_of_sound_mps * fs, refl.gain / (d_spk * d_mic)))
    return out


def simulate_pose_kernel(
    scene: Scene, body: ReflectorCloud, pair: Pair, n_taps: Optional[int] = None
) -> ImpulseResponse:
    """Pose kernel k = Σ A(X)/(‖s_spk−X‖·‖s_mic−X‖) · δ(t − t_X)."""
    taps = reflector_taps(scene, body, pair)
    return _render([d for d, _ in taps], [g for _, g in taps], n_taps, scene.sample_rate_hz)


def _sum_responses(a: ImpulseResponse, b: ImpulseResponse) -> ImpulseResponse:
    n = max(len(a), len(b))
    return ImpulseResponse(taps=a.padded(n) + b.padded(n), sample_rate_hz=a.sample_rate_hz)


def _check_source(scene: Scene, source: Waveform) -> None:
    if source.sample_rate_hz != scene.sample_rate_hz:
        raise RoomSimError(
            f"source rate {source.sample_rate_hz} Hz does not match the scene rendering rate {scene.sample_rate_hz} Hz"
        )


def pair_response(
    scene: Scene, body: Optional[ReflectorCloud], pair: Pair, n_taps: Optional[int] = None
) -> ImpulseResponse:
    """k̄ + k for one pair (k = 0 without a body)."""
    empty = simulate_empty_room(scene, pair, n_taps)
    if body is None or len(body) == 0:
        return empty
    return _sum_responses(empty, simulate_pose_kernel(scene, body, pair, n_taps))


def simulate_received(
    scene: Scene,
    body: Optional[ReflectorCloud],
    source: Waveform,
    pair: Pair,
    snr_db: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    n_taps: Optional[int] = None,
) -> Waveform:
    """r = s * (k̄ + k), optionally with white Gaussian noise at `snr_db`."""
    _check_source(scene, source)
    response = pair_response(scene, body, pair, n_taps)
    received = convolve(source, Waveform(samples=response.taps, sample_rate_hz=response.sample_rate_hz))
    if snr_db is not None:
        received = add_noise(received, snr_db, rng if rng is not None else np.random.default_rng(0))
    return received


def simulate_multiplexed_received(
    scene: Scene,
    body: Optional[ReflectorCloud],
    sources: Sequence[Waveform],
    mic: int,
    snr_db: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    n_taps: Optional[int] = None,
) -> Waveform:
    """All speakers play at once (one source each); microphone `mic` hears the sum."""
    if len(sources) != len(scene.speakers):
        raise RoomSimError(f"{len(sources)} sources for {len(scene.speakers)} speakers")
    parts = [
        simulate_received(scene, body, src, (spk, mic), n_taps=n_taps)
        for spk, src in enumerate(sources)
    ]
    received = mix(parts)
    if snr_db is not None:
        received = add_noise(received, snr_db, rng if rng is not None else np.random.default_rng(0))
    return received
