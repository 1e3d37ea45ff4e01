# backend/stages/roomsim/bodies.py
from __future__ import annotations

from typing import Sequence

import numpy as np

from common.arrays import as_vec3
from stages.roomsim.models import Reflector, ReflectorCloud


def body_cloud(
    landmarks3d: Sequence[Sequence[float]],
    points_per_landmark: int = 1,
    radius_m: float = 0.0,
    gain: float = 1.0,
    rng: np.random.Generator | None = None,
) -> ReflectorCloud:
    """
    Point reflectors around each landmark: the first sits on the landmark,
    the rest are jittered uniformly inside a ball of `radius_m`.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    points = []
    for lm in landmarks3d:
        center = as_vec3(lm, "landmark")
        points.append(Reflector(position=tuple(center.tolist()), gain=gain))
        for _ in range(max(0, points_per_landmark - 1)):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction) or 1.0
            offset = direction * radius_m * rng.uniform() ** (1.0 / 3.0)
            points.append(Reflector(position=tuple((center + offset).tolist()), gain=gain))
    return ReflectorCloud(points=points)
