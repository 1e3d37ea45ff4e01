# backend/common/fileio.py
"""
Small shared writers. JSON is written with sorted keys and a trailing newline so
reruns with the same seed produce byte-identical files.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Union

import cv2
import numpy as np

PathLike = Union[str, Path]


def write_json(path: PathLike, payload: Any) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return p


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def minmax_uint8(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0) * 255.0
    return np.round(scaled).astype(np.uint8)


def write_pgm(path: PathLike, image: np.ndarray) -> Path:
    """8-bit grayscale PGM (rows = image y)."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D uint8 image, got {image.dtype} {image.shape}")
    if not cv2.imwrite(str(p), image):
        raise OSError(f"failed to write {p}")
    return p


def read_pgm(path: PathLike) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"failed to read {path}")
    return img
