# backend/services/pipeline_service.py
"""
The subcommands as plain functions. Every command reads its inputs from files,
writes into <out>/<command>/, and records the seed and the resolved config in a
manifest.json next to its outputs. Nothing carries a wall-clock timestamp.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from common.errors import ConfigError, MissingCalibrationError
from common.fileio import write_json
from schemas.experiment import ExperimentConfig, selected_pairs
from services.dataset_service import TEST_STREAM, TRAIN_STREAM, build_sources, synthesize_dataset
from services.fanout import fan_out
from services.localize_service import LocalizationResult, localize_geometric
from stages.kernel.deconvolve import deconvolve, default_output_taps, extract_pose_kernel, for_scene, peak_delay
from stages.network.checkpoint import check_compatible, load_checkpoint, save_checkpoint
from stages.network.metrics import EvalReport, score_heatmaps, write_metrics_csv
from stages.network.models import PoseNet, TrainingLog, TrainingSample
from stages.network.posenet import build_posenet, predict
from stages.network.train import train_sgd, write_training_log
from stages.roomsim.models import ImpulseResponse, Pair, ReflectorCloud, Scene
from stages.roomsim.scene_io import load_scene, scene_to_dict
from stages.roomsim.simulate import reflector_taps, simulate_multiplexed_received
from stages.signals.models import Waveform
from stages.signals.wav_io import read_wav, write_wav
from stages.vision.formats import read_pkhm
from stages.vision.heatmaps import encode_visual
from stages.voxel.encode import encode_kernel
from stages.voxel.formats import export_pgm_slices, field_to_csv, read_pkvx, write_pkvx
from stages.voxel.fusion import stack_channels

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Kernel energy relative to the empty-room response below which a pair has "no target".
NO_TARGET_REL_ENERGY = 1e-6


# -------------------------
# File naming and manifests
# -------------------------
def mic_wav_name(mic: int, with_body: bool) -> str:
    return f"mic_{mic}_{'full' if with_body else 'empty'}.wav"


def kernel_wav_name(pair: Pair) -> str:
    return f"kernel_s{pair[0]}_m{pair[1]}.wav"


def command_dir(cfg: ExperimentConfig, command: str) -> Path:
    return Path(cfg.out) / command


def _write_manifest(
    out: Path, command: str, cfg: Optional[ExperimentConfig], outputs: Sequence[Path], **extra
) -> Path:
    payload = {
        "command": command,
        "seed": cfg.seed if cfg is not None else None,
        "config": cfg.model_dump(mode="json", exclude={"out"}) if cfg is not None else None,
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
        **extra,
    }
    return write_json(out / "manifest.json", payload)


def _load_scene(cfg: ExperimentConfig) -> Tuple[Scene, ReflectorCloud]:
    return load_scene(cfg.scene)


# -------------------------
# simulate
# -------------------------
class SimulateResult(BaseModel):
    out_dir: Path
    wavs: List[Path]
    truth: Path


def truth_document(scene: Scene, body: ReflectorCloud, bands: Sequence[Tuple[float, float]], seed: int) -> Dict:
    """Ground truth for every (speaker, mic) pair: the fractional delay and gain of each reflector tap."""
    pairs = []
    for spk, mic in scene.all_pairs():
        taps = [
            {
                "reflector": r,
                "delay_samples": delay,
                "tap": int(np.floor(delay)),
                "path_m": delay / scene.sample_rate_hz * scene.speed_of_sound_mps,
                "gain": gain,
            }
            for r, (delay, gain) in enumerate(reflector_taps(scene, body, (spk, mic)))
        ]
        pairs.append({"speaker": spk, "mic": mic, "band_hz": list(bands[spk]), "taps": taps})
    return {"seed": seed, "scene": scene_to_dict(scene, body), "pairs": pairs}


def cmd_simulate(cfg: ExperimentConfig) -> SimulateResult:
    """One empty-room and one with-body recording per microphone, all speakers playing their FDM chirps."""
    out = command_dir(cfg, "simulate")
    scene, body = _load_scene(cfg)
    plan, sources = build_sources(cfg, scene)
    n_taps = default_output_taps(scene)
    logger.info(
        "🔊 simulate: %d speakers, %d mics, %d reflectors, %d taps",
        len(scene.speakers), len(scene.microphones), len(body), n_taps,
    )

    def _record(job: Tuple[int, bool]) -> Waveform:
        mic, with_body = job
        rng = np.random.default_rng([cfg.seed, mic, int(with_body)])
        return simulate_multiplexed_received(
            scene, body if with_body else None, sources, mic, cfg.noise_snr_db, rng, n_taps
        )

    jobs = [(mic, with_body) for mic in range(len(scene.microphones)) for with_body in (False, True)]
    recordings = fan_out(_record, jobs)

    wavs = [write_wav(out / mic_wav_name(mic, wb), rec) for (mic, wb), rec in zip(jobs, recordings)]
    truth = write_json(out / "truth.json", truth_document(scene, body, plan.bands, cfg.seed))
    _write_manifest(out, "simulate", cfg, wavs + [truth])
    return SimulateResult(out_dir=out, wavs=wavs, truth=truth)


# -------------------------
# kernel
# -------------------------
class PairKernel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    pair: Pair
    kernel: ImpulseResponse
    relative_energy: float
    peak_tap: int
    path_m: float

    @property
    def has_target(self) -> bool:
        return self.relative_energy >= NO_TARGET_REL_ENERGY


class KernelResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    out_dir: Path
    kernels: List[PairKernel]

    @property
    def no_target(self) -> bool:
        return not any(k.has_target for k in self.kernels)


def _read_recordings(wav_dir: Path, n_mics: int) -> Dict[int, Tuple[Waveform, Waveform]]:
    recordings = {}
    for mic in range(n_mics):
        full_path = wav_dir / mic_wav_name(mic, True)
        empty_path = wav_dir / mic_wav_name(mic, False)
        if not full_path.exists():
            raise ConfigError(f"missing recording {full_path}")
        if not empty_path.exists():
            raise MissingCalibrationError(
                f"no empty-room recording for microphone {mic} ({empty_path}); capture the empty-room "
                f"impulse response first, the pose kernel is defined relative to it"
            )
        recordings[mic] = (read_wav(full_path), read_wav(empty_path))
    return recordings


def cmd_kernel(cfg: ExperimentConfig, wav_dir: Optional[PathLike] = None) -> KernelResult:
    """Per (speaker, mic) pair: band-masked deconvolution of both recordings, then subtraction."""
    out = command_dir(cfg, "kernel")
    wav_dir = Path(wav_dir) if wav_dir is not None else command_dir(cfg, "simulate")
    scene, _ = _load_scene(cfg)
    plan, sources = build_sources(cfg, scene)
    recordings = _read_recordings(wav_dir, len(scene.microphones))
    deconv = for_scene(cfg.deconv, scene)

    def _extract(pair: Pair) -> PairKernel:
        spk, mic = pair
        full, empty = recordings[mic]
        dcfg = deconv.with_band(*plan.band_for(spk))
        empty_ir = deconvolve(empty, sources[spk], dcfg)
        kernel = extract_pose_kernel(deconvolve(full, sources[spk], dcfg), empty_ir)
        reference = empty_ir.energy()
        rel = kernel.energy() / reference if reference > 0 else float(kernel.energy() > 0)
        tap, path = peak_delay(kernel, scene.speed_of_sound_mps)
        logger.debug("pair %s: relative energy %.3e, peak tap %d", pair, rel, tap)
        return PairKernel(pair=pair, kernel=kernel, relative_energy=rel, peak_tap=tap, path_m=path)

    kernels = fan_out(_extract, scene.all_pairs())

    outputs = [
        write_wav(out / kernel_wav_name(k.pair), Waveform(samples=k.kernel.taps, sample_rate_hz=k.kernel.sample_rate_hz))
        for k in kernels
    ]
    table = pd.DataFrame(
        {
            "speaker": [k.pair[0] for k in kernels],
            "mic": [k.pair[1] for k in kernels],
            "band_lo_hz": [plan.band_for(k.pair[0])[0] for k in kernels],
            "band_hi_hz": [plan.band_for(k.pair[0])[1] for k in kernels],
            "peak_tap": [k.peak_tap for k in kernels],
            "path_m": [k.path_m for k in kernels],
            "relative_energy": [k.relative_energy for k in kernels],
            "target": [k.has_target for k in kernels],
        }
    )
    csv_path = out / "kernels.csv"
    table.to_csv(csv_path, index=False, float_format="%.9g")
    outputs.append(csv_path)

    result = KernelResult(out_dir=out, kernels=kernels)
    if result.no_target:
        logger.warning("⚠️ no target: every pose kernel is below %.0e of its empty-room energy", NO_TARGET_REL_ENERGY)
    _write_manifest(out, "kernel", cfg, outputs, no_target=result.no_target)
    return result


def load_kernels(kernel_dir: PathLike, pairs: Sequence[Pair]) -> Dict[Pair, ImpulseResponse]:
    kernel_dir = Path(kernel_dir)
    kernels = {}
    for pair in pairs:
        path = kernel_dir / kernel_wav_name(pair)
        if not path.exists():
            raise ConfigError(f"missing pose kernel {path}; run the kernel command first")
        w = read_wav(path)
        kernels[tuple(pair)] = ImpulseResponse(taps=w.samples, sample_rate_hz=w.sample_rate_hz)
    return kernels


# -------------------------
# encode / localize
# -------------------------
def cmd_encode(cfg: ExperimentConfig, kernel_dir: Optional[PathLike] = None) -> Path:
    """PKVX field with one channel per selected pair, in pair order."""
    out = command_dir(cfg, "encode")
    scene, _ = _load_scene(cfg)
    pairs = selected_pairs(cfg, scene.all_pairs())
    kernels = load_kernels(kernel_dir if kernel_dir is not None else command_dir(cfg, "kernel"), pairs)

    def _encode(pair: Pair):
        spk, mic = pair
        return encode_kernel(
            kernels[pair], scene.speaker(spk), scene.microphone(mic), scene.speed_of_sound_mps,
            cfg.grid, use_envelope=cfg.encode_envelope,
        )

    field = stack_channels(fan_out(_encode, pairs))
    path = write_pkvx(out / "encoded.pkvx", field)
    _write_manifest(out, "encode", cfg, [path], channels=[list(p) for p in pairs])
    return path


def cmd_localize(
    cfg: ExperimentConfig, kernel_dir: Optional[PathLike] = None, heatmaps: Optional[PathLike] = None
) -> LocalizationResult:
    out = command_dir(cfg, "localize")
    scene, body = _load_scene(cfg)
    pairs = selected_pairs(cfg, scene.all_pairs())
    kernels = load_kernels(kernel_dir if kernel_dir is not None else command_dir(cfg, "kernel"), pairs)

    visual = None
    if heatmaps is not None:
        cam = cfg.camera()
        if cam is None:
            raise ConfigError("a camera (vision.camera) is required when heatmaps are supplied")
        visual = encode_visual(read_pkhm(heatmaps), cam, cfg.grid)

    result = localize_geometric(kernels, scene, cfg.grid, visual)

    truth = [list(r.position) for r in body.points]
    errors = [
        min(float(np.linalg.norm(np.subtract(est, t))) for t in truth) if truth else None
        for est in result.estimates
    ]
    outputs = [
        write_json(
            out / "estimate.json",
            {
                "estimates": [list(e) for e in result.estimates],
                "indices": [list(i) for i in result.indices],
                "pairs": [list(p) for p in result.pairs],
                "warnings": result.warnings,
                "truth": truth,
                "errors_m": errors,
            },
        )
    ]
    frame = pd.DataFrame(
        [
            {"channel": c, "i": idx[0], "j": idx[1], "k": idx[2], "x": e[0], "y": e[1], "z": e[2]}
            for c, (idx, e) in enumerate(zip(result.indices, result.estimates))
        ],
        columns=["channel", "i", "j", "k", "x", "y", "z"],
    )
    csv_path = out / "estimates.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(csv_path, index=False, float_format="%.9g")
    outputs.append(csv_path)
    outputs.append(write_pkvx(out / "fused.pkvx", result.fused))
    for c in range(result.fused.n_channels):
        outputs.extend(export_pgm_slices(result.fused, out / "slices", channel=c, prefix=f"fused_c{c}"))
        outputs.append(out / "slices" / f"fused_c{c}_norm.json")
    _write_manifest(out, "localize", cfg, outputs, heatmaps=heatmaps is not None)
    return result


# -------------------------
# train / eval
# -------------------------
@dataclass
class TrainResult:
    checkpoint: Path
    log: TrainingLog
    net: PoseNet


def cmd_train(cfg: ExperimentConfig) -> TrainResult:
    out = command_dir(cfg, "train")
    scene, _ = _load_scene(cfg)
    samples, _ = synthesize_dataset(cfg, scene, cfg.dataset.n_train, cfg.seed, TRAIN_STREAM)
    net = build_posenet(cfg.network, rng_seed=cfg.seed, learning_rate=cfg.train.learning_rate)
    log = train_sgd(net, samples, cfg.train.epochs)
    ckpt = save_checkpoint(out / "posenet.pknn", net)
    log_path = write_training_log(out / "training_log.csv", log)
    _write_manifest(out, "train", cfg, [ckpt, log_path])
    return TrainResult(checkpoint=ckpt, log=log, net=net)


def evaluate(
    net: PoseNet, samples: Sequence[TrainingSample], truth: Sequence[np.ndarray]
) -> Tuple[EvalReport, np.ndarray, List[List[np.ndarray]]]:
    """Metrics of the final-stage readout against the true landmarks."""
    return score_heatmaps([predict(net, s.audio, s.visual) for s in samples], truth)


def cmd_eval(cfg: ExperimentConfig, checkpoint: PathLike) -> EvalReport:
    out = command_dir(cfg, "eval")
    net = load_checkpoint(checkpoint)
    check_compatible(net, cfg.network)
    scene, _ = _load_scene(cfg)
    samples, truth = synthesize_dataset(cfg, scene, cfg.dataset.n_test, cfg.seed, TEST_STREAM)
    report, errors, predictions = evaluate(net, samples, truth)

    metrics_path = write_metrics_csv(out / "metrics.csv", report)
    rows = []
    for s, (pred, true) in enumerate(zip(predictions, truth)):
        for lm, (p, t) in enumerate(zip(pred, true)):
            rows.append(
                {"sample": s, "landmark": lm, "px": p[0], "py": p[1], "pz": p[2],
                 "tx": t[0], "ty": t[1], "tz": t[2], "error_cm": errors[s, lm]}
            )
    pred_path = out / "predictions.csv"
    pd.DataFrame(rows).to_csv(pred_path, index=False, float_format="%.9g")
    _write_manifest(out, "eval", cfg, [metrics_path, pred_path], checkpoint=Path(checkpoint).name)
    logger.info("📊 eval: MPJPE %.2f cm, PCK %s", report.mpjpe_cm, report.pck)
    return report


# -------------------------
# export
# -------------------------
def cmd_export(field_path: PathLike, out_dir: PathLike, channel: int = 0) -> List[Path]:
    """PGM z-slices of one channel plus a CSV dump of the whole field."""
    out = Path(out_dir)
    field = read_pkvx(field_path)
    if not (0 <= channel < field.n_channels):
        raise ConfigError(f"channel {channel} out of range (field has {field.n_channels})")
    slices = export_pgm_slices(field, out, channel=channel)
    csv_path = field_to_csv(out / "field.csv", field)
    outputs = slices + [out / "slice_norm.json", csv_path]
    _write_manifest(out, "export", None, outputs, field=Path(field_path).name, channel=channel)
    return slices
