# backend/stages/vision/camera.py
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from common.arrays import as_vec3
from common.errors import HeatmapError
from stages.vision.models import Camera

Pixel = Tuple[float, float]

_MIN_DEPTH = 1e-6


def project(cam: Camera, X: Sequence[float]) -> Optional[Pixel]:
    """Pixel of world point X, or None when it is not in front of the camera."""
    xc = cam.R @ as_vec3(X) + cam.t
    if xc[2] <= _MIN_DEPTH:
        return None
    return (float(cam.fx * xc[0] / xc[2] + cam.cx), float(cam.fy * xc[1] / xc[2] + cam.cy))


def project_points(cam: Camera, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized project: (M, 3) points → (M, 2) pixels and a validity mask (depth > 1e-6)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    xc = pts @ cam.R.T + cam.t
    valid = xc[:, 2] > _MIN_DEPTH
    z = np.where(valid, xc[:, 2], 1.0)
    uv = np.stack([cam.fx * xc[:, 0] / z + cam.cx, cam.fy * xc[:, 1] / z + cam.cy], axis=-1)
    return uv, valid


def back_project(cam: Camera, pixel: Pixel, depth: float) -> np.ndarray:
    """World point seen at `pixel` whose camera-frame depth is `depth`."""
    u, v = pixel
    xc = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return cam.R.T @ (xc - cam.t)


def look_at(
    eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, 0.0, 1.0)
) -> Tuple[np.ndarray, np.ndarray]:
    """World→camera (R, t) for a camera at `eye` looking at `target`."""
    e, tgt, u = as_vec3(eye, "eye"), as_vec3(target, "target"), as_vec3(up, "up")
    forward = tgt - e
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise HeatmapError("look_at: eye and target coincide")
    z = forward / norm
    x = np.cross(z, u)
    if np.linalg.norm(x) < 1e-12:
        raise HeatmapError("look_at: viewing direction is parallel to the up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ e


def make_camera(
    eye: Sequence[float],
    target: Sequence[float],
    focal_px: float,
    width: int,
    height: int,
    up: Sequence[float] = (0.0, 0.0, 1.0),
) -> Camera:
    R, t = look_at(eye, target, up)
    return Camera(
        fx=focal_px,
        fy=focal_px,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        rotation=tuple(tuple(float(c) for c in row) for row in R),
        translation=tuple(float(c) for c in t),
        width=width,
        height=height,
    )


def detect_landmarks(
    cam: Camera,
    landmarks3d: Sequence[Sequence[float]],
    noise_px: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> List[Optional[Pixel]]:
    """Synthetic 2D detector: projected landmarks plus Gaussian pixel noise."""
    rng = rng if rng is not None else np.random.default_rng(0)
    out: List[Optional[Pixel]] = []
    for lm in landmarks3d:
        px = project(cam, lm)
        if px is not None and noise_px > 0:
            du, dv = rng.normal(0.0, noise_px, size=2)
            px = (px[0] + float(du), px[1] + float(dv))
        out.append(px)
    return out
