# backend/services/localize_service.py
from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from common.arrays import Vec3
from common.errors import VoxelError
from stages.kernel.deconvolve import extract_pair_kernel, for_scene
from stages.kernel.models import DeconvConfig
from stages.roomsim.models import ImpulseResponse, Pair, ReflectorCloud, Scene
from stages.roomsim.simulate import simulate_received
from stages.signals.chirp import gen_chirp
from stages.signals.models import ChirpSpec
from stages.voxel.encode import encode_kernel
from stages.voxel.fusion import argmax_all, fuse_product, normalize_field
from stages.voxel.models import Index3, VoxelField, VoxelGrid

logger = logging.getLogger(__name__)

AMBIGUOUS_SINGLE_PAIR = (
    "only one speaker/microphone pair: the estimate lies somewhere on a single ellipsoid "
    "and the location is underdetermined"
)
COLLINEAR_FOCI = "all pair foci are collinear: the estimate is ambiguous under rotation about that line"
NO_TARGET = "no target: every pose kernel is empty"


class LocalizationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    estimates: List[Vec3] = Field(default_factory=list)
    indices: List[Index3] = Field(default_factory=list)
    fused: VoxelField
    pairs: List[Pair]
    warnings: List[str] = Field(default_factory=list)

    @property
    def no_target(self) -> bool:
        return NO_TARGET in self.warnings


def foci_collinear(points: np.ndarray, rel_tol: float = 1e-9) -> bool:
    """True when the distinct points span at most a line."""
    pts = np.unique(np.round(np.asarray(points, dtype=np.float64), 12), axis=0)
    if len(pts) <= 2:
        return True
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    return bool(s[1] <= rel_tol * max(s[0], 1e-300))


def localize_geometric(
    kernels: Mapping[Pair, ImpulseResponse],
    scene: Scene,
    grid: VoxelGrid,
    visual: Optional[VoxelField] = None,
) -> LocalizationResult:
    """
    Non-learned localizer: envelope-encode every pair's kernel, scale each to a unit
    peak, multiply across pairs, optionally multiply by each visual channel, and read
    the argmax of every resulting channel.
    """
    if not kernels:
        raise VoxelError("localize_geometric needs at least one pose kernel")
    pairs = sorted(kernels)
    warnings: List[str] = []

    fields = []
    for spk, mic in pairs:
        encoded = encode_kernel(
            kernels[(spk, mic)],
            scene.speaker(spk),
            scene.microphone(mic),
            scene.speed_of_sound_mps,
            grid,
            use_envelope=True,
        )
        fields.append(normalize_field(encoded))
    audio = fuse_product(fields)

    if visual is not None:
        if visual.grid != grid:
            raise VoxelError(f"visual field grid {visual.grid} differs from the localization grid {grid}")
        fused = VoxelField(
            grid=grid,
            values=audio.values[0][None] * visual.values,
            metadata={"fusion": "product", "inputs": len(fields), "visual": True},
        )
    else:
        fused = audio

    if len(pairs) == 1:
        warnings.append(AMBIGUOUS_SINGLE_PAIR)
    else:
        foci = [scene.speaker(s) for s, _ in pairs] + [scene.microphone(m) for _, m in pairs]
        if foci_collinear(np.stack(foci)):
            warnings.append(COLLINEAR_FOCI)

    if all(not np.any(f.values) for f in fields):
        warnings.append(NO_TARGET)
        for w in warnings:
            logger.warning("⚠️ %s", w)
        return LocalizationResult(fused=fused, pairs=pairs, warnings=warnings)

    peaks = argmax_all(fused)
    for w in warnings:
        logger.warning("⚠️ %s", w)
    logger.info("📍 localized %d channel(s) from %d pair(s)", len(peaks), len(pairs))
    return LocalizationResult(
        estimates=[tuple(float(c) for c in center) for _, center in peaks],
        indices=[idx for idx, _ in peaks],
        fused=fused,
        pairs=pairs,
        warnings=warnings,
    )


def simulate_pair_kernels(
    scene: Scene,
    body: ReflectorCloud,
    pairs: Sequence[Pair],
    chirp: ChirpSpec,
    deconv: Optional[DeconvConfig] = None,
    snr_db: Optional[float] = None,
    seed: int = 0,
) -> Dict[Pair, ImpulseResponse]:
    """
    Pose kernels recorded pair by pair (one speaker active at a time, full sweep),
    the capture used when no multiplexing is needed.
    """
    source = gen_chirp(chirp, scene.sample_rate_hz)
    cfg = for_scene(deconv or DeconvConfig(), scene).with_band(chirp.f_start_hz, chirp.f_end_hz)
    kernels: Dict[Pair, ImpulseResponse] = {}
    for n, pair in enumerate(pairs):
        rng = np.random.default_rng([seed, n])
        full = simulate_received(scene, body, source, pair, snr_db=snr_db, rng=rng)
        empty = simulate_received(scene, None, source, pair, snr_db=snr_db, rng=rng)
        kernels[tuple(pair)] = extract_pair_kernel(full, empty, source, cfg)
    return kernels
