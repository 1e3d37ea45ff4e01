# backend/stages/vision/formats.py
"""
PKHM heatmap files (little-endian): b"PKHM" | W u32 | H u32 | N u32 | N×H×W float32, row-major.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from common.errors import FieldFormatError
from common.fileio import minmax_uint8, write_pgm
from stages.vision.models import Heatmap2D

PathLike = Union[str, Path]

PKHM_MAGIC = b"PKHM"
_HEADER = struct.Struct("<4s3I")


def write_pkhm(path: PathLike, hm: Heatmap2D) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(PKHM_MAGIC, hm.width, hm.height, hm.n_landmarks)
    p.write_bytes(header + hm.values.astype("<f4").tobytes(order="C"))
    return p


def read_pkhm(path: PathLike) -> Heatmap2D:
    p = Path(path)
    raw = p.read_bytes()
    if len(raw) < _HEADER.size:
        raise FieldFormatError(f"{p}: truncated PKHM header")
    magic, w, h, n = _HEADER.unpack_from(raw, 0)
    if magic != PKHM_MAGIC:
        raise FieldFormatError(f"{p}: bad magic {magic!r}, expected {PKHM_MAGIC!r}")
    expected = _HEADER.size + 4 * w * h * n
    if len(raw) != expected:
        raise FieldFormatError(f"{p}: expected {expected} bytes for {n}×{h}×{w}, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64).reshape(n, h, w)
    return Heatmap2D(values=values)


def export_heatmap_pgm(hm: Heatmap2D, out_dir: PathLike, prefix: str = "heatmap") -> List[Path]:
    """One PGM per landmark channel; heatmaps already live in [0, 1]."""
    out = Path(out_dir)
    return [
        write_pgm(out / f"{prefix}_{c:02d}.pgm", minmax_uint8(hm.values[c], 0.0, 1.0))
        for c in range(hm.n_landmarks)
    ]
