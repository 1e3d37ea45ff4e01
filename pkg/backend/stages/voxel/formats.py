# backend/stages/voxel/formats.py
"""
Voxel-field files.

PKVX (little-endian throughout):
    b"PKVX" | version u32 | nx ny nz u32 | origin 3×f64 (m) | cell f64 (m) | channels u32
    then channels × nx·ny·nz float32, x-fastest.
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from common.errors import FieldFormatError
from common.fileio import minmax_uint8, write_json, write_pgm
from stages.voxel.models import VoxelField, VoxelGrid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PKVX_MAGIC = b"PKVX"
PKVX_VERSION = 1
_HEADER = struct.Struct("<4sI3I3ddI")


def write_pkvx(path: PathLike, field: VoxelField) -> Path:
    g = field.grid
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(PKVX_MAGIC, PKVX_VERSION, *g.dims, *g.origin, g.cell_m, field.n_channels)
    body = b"".join(field.values[c].ravel(order="F").astype("<f4").tobytes() for c in range(field.n_channels))
    p.write_bytes(header + body)
    return p


def read_pkvx(path: PathLike) -> VoxelField:
    p = Path(path)
    raw = p.read_bytes()
    if len(raw) < _HEADER.size:
        raise FieldFormatError(f"{p}: truncated PKVX header ({len(raw)} bytes)")
    magic, version, nx, ny, nz, ox, oy, oz, cell, channels = _HEADER.unpack_from(raw, 0)
    if magic != PKVX_MAGIC:
        raise FieldFormatError(f"{p}: bad magic {magic!r}, expected {PKVX_MAGIC!r}")
    if version != PKVX_VERSION:
        raise FieldFormatError(f"{p}: unsupported PKVX version {version}")
    if channels < 1:
        raise FieldFormatError(f"{p}: PKVX header declares no channels")
    n = nx * ny * nz
    expected = _HEADER.size + 4 * n * channels
    if len(raw) != expected:
        raise FieldFormatError(f"{p}: expected {expected} bytes for {channels}×{(nx, ny, nz)}, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    values = flat.reshape(channels, n)
    try:
        grid = VoxelGrid(origin=(ox, oy, oz), cell_m=cell, dims=(nx, ny, nz))
        return VoxelField(grid=grid, values=np.stack([v.reshape(grid.dims, order="F") for v in values]))
    except ValidationError as e:
        raise FieldFormatError(f"{p}: invalid PKVX header: {e.errors()[0]['msg']}") from e


def field_to_frame(field: VoxelField) -> pd.DataFrame:
    """One row per voxel (x-fastest): i, j, k, x, y, z, c0 … c{C-1}."""
    g = field.grid
    ii, jj, kk = np.meshgrid(*(np.arange(d) for d in g.dims), indexing="ij")
    centers = g.centers()
    cols: Dict[str, np.ndarray] = {
        "i": ii.ravel(order="F"),
        "j": jj.ravel(order="F"),
        "k": kk.ravel(order="F"),
        "x": centers[..., 0].ravel(order="F"),
        "y": centers[..., 1].ravel(order="F"),
        "z": centers[..., 2].ravel(order="F"),
    }
    for c in range(field.n_channels):
        cols[f"c{c}"] = field.values[c].ravel(order="F")
    return pd.DataFrame(cols)


def field_to_csv(path: PathLike, field: VoxelField) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    field_to_frame(field).to_csv(p, index=False, float_format="%.9g")
    return p


def field_from_csv(path: PathLike, grid: VoxelGrid) -> VoxelField:
    df = pd.read_csv(path)
    channels = sorted((c for c in df.columns if c.startswith("c") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    if not channels:
        raise FieldFormatError(f"{path}: no channel columns")
    if len(df) != grid.n_voxels:
        raise FieldFormatError(f"{path}: {len(df)} rows for a grid of {grid.n_voxels} voxels")
    values = np.zeros((len(channels), *grid.dims))
    idx = (df["i"].to_numpy(), df["j"].to_numpy(), df["k"].to_numpy())
    for c, name in enumerate(channels):
        values[c][idx] = df[name].to_numpy(dtype=np.float64)
    return VoxelField(grid=grid, values=values)


def export_pgm_slices(field: VoxelField, out_dir: PathLike, channel: int = 0, prefix: str = "slice") -> List[Path]:
    """
    One PGM per z-slice of `channel` (image rows = y, columns = x), min-max normalized
    over the whole channel. The constants go to <prefix>_norm.json next to the images.
    """
    out = Path(out_dir)
    vol = field.values[channel]
    lo, hi = float(vol.min()), float(vol.max())
    paths = []
    for k in range(field.grid.dims[2]):
        img = minmax_uint8(vol[:, :, k].T, lo, hi)
        paths.append(write_pgm(out / f"{prefix}_z{k:03d}.pgm", img))
    write_json(
        out / f"{prefix}_norm.json",
        {"channel": channel, "min": lo, "max": hi, "dims": list(field.grid.dims), "slices": len(paths)},
    )
    logger.info("exported %d slices of channel %d to %s", len(paths), channel, out)
    return paths
