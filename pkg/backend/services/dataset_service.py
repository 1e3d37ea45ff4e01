# backend/services/dataset_service.py
"""
Synthetic training data: every sample is one body pose rendered through the same
pipeline a recording would take (simulate → deconvolve → subtract → encode), plus
the detector heatmap seen by the configured camera and the Gaussian 3D target.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from common.errors import ConfigError
from schemas.experiment import ExperimentConfig, selected_pairs
from services.fanout import fan_out
from stages.kernel.deconvolve import extract_pair_kernel, for_scene
from stages.network.models import TrainingSample
from stages.network.targets import make_target
from stages.roomsim.bodies import body_cloud
from stages.roomsim.models import Pair, ReflectorCloud, Scene
from stages.roomsim.simulate import simulate_received
from stages.signals.chirp import band_chirps, fdm_partition
from stages.signals.models import FdmPlan, Waveform
from stages.vision.camera import detect_landmarks
from stages.vision.heatmaps import encode_visual, gaussian_heatmap
from stages.voxel.encode import encode_kernel
from stages.voxel.fusion import normalize_field
from stages.voxel.models import VoxelField

logger = logging.getLogger(__name__)

# Stream ids keep train and test draws independent under one seed.
TRAIN_STREAM = 0
TEST_STREAM = 1


def build_sources(cfg: ExperimentConfig, scene: Scene) -> Tuple[FdmPlan, List[Waveform]]:
    """One chirp per speaker, each sweeping its own sub-band of the configured sweep."""
    plan = fdm_partition(cfg.chirp.f_start_hz, cfg.chirp.f_end_hz, len(scene.speakers), cfg.fdm.guard_hz)
    sources = band_chirps(plan, cfg.chirp.duration_s, cfg.chirp.amplitude, scene.sample_rate_hz)
    return plan, sources


def _pair_field(
    cfg: ExperimentConfig,
    scene: Scene,
    body: ReflectorCloud,
    plan: FdmPlan,
    sources: Sequence[Waveform],
    pair: Pair,
    rng: np.random.Generator,
) -> VoxelField:
    spk, mic = pair
    src = sources[spk]
    full = simulate_received(scene, body, src, pair, snr_db=cfg.noise_snr_db, rng=rng)
    empty = simulate_received(scene, None, src, pair, snr_db=cfg.noise_snr_db, rng=rng)
    kernel = extract_pair_kernel(full, empty, src, for_scene(cfg.deconv, scene).with_band(*plan.band_for(spk)))
    field = encode_kernel(
        kernel, scene.speaker(spk), scene.microphone(mic), scene.speed_of_sound_mps, cfg.grid, use_envelope=True
    )
    return normalize_field(field)


def synthesize_sample(
    cfg: ExperimentConfig,
    scene: Scene,
    landmarks3d: Sequence[Sequence[float]],
    rng: np.random.Generator,
    sources: Optional[Tuple[FdmPlan, List[Waveform]]] = None,
) -> TrainingSample:
    """(audio fields per pair, visual field, target) for one pose; inputs the net ignores are skipped."""
    spec = cfg.network
    if len(landmarks3d) != spec.n_landmarks:
        raise ConfigError(f"{len(landmarks3d)} landmarks for a network predicting {spec.n_landmarks}")

    audio: List[VoxelField] = []
    if spec.uses_audio:
        plan, waves = sources if sources is not None else build_sources(cfg, scene)
        body = body_cloud(
            landmarks3d,
            points_per_landmark=cfg.dataset.points_per_landmark,
            radius_m=cfg.dataset.body_radius_m,
            gain=cfg.dataset.reflector_gain,
            rng=rng,
        )
        for pair in selected_pairs(cfg, scene.all_pairs()):
            audio.append(_pair_field(cfg, scene, body, plan, waves, pair, rng))

    visual: Optional[VoxelField] = None
    if spec.uses_visual:
        cam = cfg.camera()
        if cam is None:
            raise ConfigError(f"network inputs={spec.inputs} needs vision.camera in the config")
        pixels = detect_landmarks(cam, landmarks3d, noise_px=cfg.vision.noise_px, rng=rng)
        heatmap = gaussian_heatmap(pixels, cfg.vision.sigma_px, cam.width, cam.height)
        visual = encode_visual(heatmap, cam, cfg.grid)

    target = make_target(landmarks3d, cfg.grid, cfg.train.target_sigma_m)
    return TrainingSample(audio=audio, visual=visual, target=target)


def draw_landmarks(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform landmark positions inside the grid, `margin_cells` away from every face."""
    g = cfg.grid
    margin = cfg.dataset.margin_cells * g.cell_m
    lo = np.asarray(g.origin) + margin
    hi = np.asarray(g.origin) + np.asarray(g.extent_m) - margin
    if np.any(hi <= lo):
        raise ConfigError(f"grid {g.dims} is too small for a margin of {cfg.dataset.margin_cells} cells")
    return rng.uniform(lo, hi, size=(cfg.network.n_landmarks, 3))


def synthesize_dataset(
    cfg: ExperimentConfig, scene: Scene, n: int, seed: int, stream: int = TRAIN_STREAM
) -> Tuple[List[TrainingSample], List[np.ndarray]]:
    """
    n samples and their ground-truth landmarks. Sample i draws from its own
    generator seeded by (seed, stream, i), so the result does not depend on
    how the work is spread over threads.
    """
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    sources = build_sources(cfg, scene) if cfg.network.uses_audio else None

    def _one(i: int) -> Tuple[TrainingSample, np.ndarray]:
        rng = np.random.default_rng([seed, stream, i])
        landmarks = draw_landmarks(cfg, rng)
        return synthesize_sample(cfg, scene, landmarks, rng, sources), landmarks

    logger.info("🧪 synthesizing %d samples (seed %d, stream %d, inputs=%s)", n, seed, stream, cfg.network.inputs)
    results = fan_out(_one, range(n))
    return [s for s, _ in results], [lm for _, lm in results]
