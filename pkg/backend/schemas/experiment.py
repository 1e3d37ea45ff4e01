from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from common.arrays import Vec3
from common.config_loader import DEFAULT_SEED, MAX_VOXELS
from common.errors import ConfigError
from stages.kernel.models import DeconvConfig
from stages.network.models import NetworkSpec
from stages.roomsim.models import Pair
from stages.signals.models import ChirpSpec
from stages.vision.camera import make_camera
from stages.vision.models import Camera
from stages.voxel.models import VoxelGrid

logger = logging.getLogger(__name__)

# Grid and deconvolution settings are the stage models themselves.
GridSpec = VoxelGrid
DeconvSpec = DeconvConfig


class FdmSpec(BaseModel):
    """Sub-band split of the chirp's sweep, one band per speaker."""
    guard_hz: float = Field(default=0.0, ge=0.0)


class CameraSpec(BaseModel):
    """Look-at pinhole camera; principal point at the image center."""
    eye: Vec3
    target: Vec3
    up: Vec3 = (0.0, 0.0, 1.0)
    focal_px: PositiveFloat = 500.0
    width: PositiveInt = 640
    height: PositiveInt = 480

    def build(self) -> Camera:
        return make_camera(self.eye, self.target, self.focal_px, self.width, self.height, self.up)


class VisionSpec(BaseModel):
    camera: Optional[CameraSpec] = None
    sigma_px: PositiveFloat = 4.0
    noise_px: float = Field(default=0.0, ge=0.0)


class TrainSpec(BaseModel):
    epochs: PositiveInt = 50
    # 1.0 diverges on the toy nets
    learning_rate: float = Field(default=0.01, ge=0.0)
    target_sigma_m: PositiveFloat = 0.10


class DatasetSpec(BaseModel):
    n_train: PositiveInt = 200
    n_test: PositiveInt = 50
    margin_cells: int = Field(default=2, ge=0)
    points_per_landmark: PositiveInt = 1
    body_radius_m: float = Field(default=0.0, ge=0.0)
    reflector_gain: PositiveFloat = 1.0


class ExperimentConfig(BaseModel):
    """One JSON file drives every subcommand; flags override `seed` and `out`."""
    model_config = ConfigDict(extra="forbid")

    scene: str
    grid: GridSpec = Field(default_factory=GridSpec)
    chirp: ChirpSpec = Field(default_factory=ChirpSpec)
    fdm: FdmSpec = Field(default_factory=FdmSpec)
    deconv: DeconvSpec = Field(default_factory=DeconvSpec)
    vision: VisionSpec = Field(default_factory=VisionSpec)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    train: TrainSpec = Field(default_factory=TrainSpec)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    # None → every (speaker, microphone) pair
    pairs: Optional[List[Pair]] = None
    encode_envelope: bool = True
    noise_snr_db: Optional[float] = None
    seed: int = DEFAULT_SEED
    out: str = "out"

    @model_validator(mode="after")
    def _budget(self) -> "ExperimentConfig":
        if self.grid.n_voxels > MAX_VOXELS:
            raise ValueError(
                f"grid {self.grid.dims} has {self.grid.n_voxels} voxels, above the budget of {MAX_VOXELS}"
            )
        return self

    def camera(self) -> Optional[Camera]:
        return self.vision.camera.build() if self.vision.camera is not None else None


# -------------------------
# Loading with line-level errors
# -------------------------
def _key_line(text: str, loc: Sequence[Union[str, int]]) -> Optional[int]:
    """Line of the deepest object key in `loc`, searching each key after its parent's position."""
    pos = 0
    line: Optional[int] = None
    for part in loc:
        if not isinstance(part, str):
            continue
        hit = text.find(f'"{part}"', pos)
        if hit < 0:
            break
        pos = hit
        line = text.count("\n", 0, hit) + 1
    return line


def format_validation_error(source: str, text: str, err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = e.get("loc", ())
        where = ".".join(str(p) for p in loc) or "<root>"
        line = _key_line(text, loc)
        prefix = f"{source}:{line}" if line is not None else source
        lines.append(f"{prefix}: {where}: {e.get('msg')}")
    return "\n".join(lines)


def parse_experiment(text: str, source: str = "<config>", base_dir: Optional[Path] = None) -> ExperimentConfig:
    try:
        raw: Dict[str, Any] = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(format_validation_error(source, text, e)) from e

    scene = Path(cfg.scene)
    if not scene.is_absolute() and base_dir is not None:
        scene = base_dir / scene
    if not scene.exists():
        line = _key_line(text, ["scene"])
        raise ConfigError(f"{source}:{line}: scene: file not found: {scene}")
    return cfg.model_copy(update={"scene": str(scene)})


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    cfg = parse_experiment(p.read_text(encoding="utf-8"), source=str(p), base_dir=p.parent)
    logger.info("⚙️ loaded experiment config %s (grid %s, seed %d)", p, cfg.grid.dims, cfg.seed)
    return cfg


def apply_overrides(cfg: ExperimentConfig, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    """Command-line flags win over file values."""
    update: Dict[str, Any] = {}
    if seed is not None:
        update["seed"] = seed
    if out is not None:
        update["out"] = out
    return cfg.model_copy(update=update) if update else cfg


def selected_pairs(cfg: ExperimentConfig, all_pairs: Sequence[Pair]) -> List[Tuple[int, int]]:
    if cfg.pairs is None:
        return list(all_pairs)
    missing = [p for p in cfg.pairs if tuple(p) not in set(all_pairs)]
    if missing:
        raise ConfigError(f"pairs {missing} do not exist in the scene")
    return [tuple(p) for p in cfg.pairs]
