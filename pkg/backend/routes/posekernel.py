from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional

import numpy as np
from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field, PositiveFloat

from common.arrays import Vec3
from common.config_loader import SPEED_OF_SOUND_MPS
from common.errors import PoseKernelError
from services.localize_service import localize_geometric, simulate_pair_kernels
from stages.roomsim.models import Pair
from stages.roomsim.scene_io import scene_from_dict
from stages.signals.models import ChirpSpec
from stages.voxel.encode import arrival_time
from stages.voxel.models import VoxelGrid

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/posekernel", tags=["Pose Kernel"])

# Keeps one request from allocating an unbounded grid.
MAX_REQUEST_VOXELS = 2_000_000


class ArrivalTimeRequest(BaseModel):
    point: Vec3
    speaker: Vec3
    microphone: Vec3
    speed_of_sound_mps: PositiveFloat = SPEED_OF_SOUND_MPS


class LocalizeRequest(BaseModel):
    scene: Dict[str, Any]
    grid: VoxelGrid
    pairs: Optional[List[Pair]] = None
    chirp: ChirpSpec = Field(default_factory=ChirpSpec)
    snr_db: Optional[float] = None
    seed: int = 0


@router.post("/arrival-time")
def post_arrival_time(req: ArrivalTimeRequest) -> Dict[str, float]:
    try:
        t = arrival_time(req.point, req.speaker, req.microphone, req.speed_of_sound_mps)
    except (PoseKernelError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    return {"arrival_time_s": t, "distance_sum_m": t * req.speed_of_sound_mps}


@router.post("/localize")
def post_localize(req: LocalizeRequest) -> Dict[str, Any]:
    """Simulate the scene's kernels pair by pair and return the geometric estimate."""
    if req.grid.n_voxels > MAX_REQUEST_VOXELS:
        raise HTTPException(
            status_code=422, detail=f"grid has {req.grid.n_voxels} voxels (limit {MAX_REQUEST_VOXELS})"
        )
    try:
        scene, body = scene_from_dict(req.scene)
        if len(body) == 0:
            raise HTTPException(status_code=422, detail="scene has no reflectors to localize")
        pairs = [tuple(p) for p in req.pairs] if req.pairs else scene.all_pairs()
        kernels = simulate_pair_kernels(scene, body, pairs, req.chirp, snr_db=req.snr_db, seed=req.seed)
        result = localize_geometric(kernels, scene, req.grid)
    except PoseKernelError as e:
        logger.warning("⚠️ localize request rejected: %s", e)
        raise HTTPException(status_code=422, detail=str(e))

    truth = [list(r.position) for r in body.points]
    errors = [min(float(np.linalg.norm(np.subtract(est, t))) for t in truth) for est in result.estimates]
    return {
        "estimates": [list(e) for e in result.estimates],
        "truth": truth,
        "errors_m": errors,
        "pairs": [list(p) for p in result.pairs],
        "warnings": result.warnings,
    }
