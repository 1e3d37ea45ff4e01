# backend/stages/network/checkpoint.py
"""
PKNN checkpoints (little-endian):
    b"PKNN" | version u32 | manifest_len u32 | manifest (UTF-8 JSON) | float64 parameters

The manifest carries the NetworkSpec, seed, learning rate and the layer list; the
parameters follow in layer order, weights (C order) then bias for each layer.
"""
from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from pydantic import ValidationError

from common.errors import CheckpointError
from stages.network.models import NetworkSpec, PoseNet
from stages.network.posenet import build_posenet

logger = logging.getLogger(__name__)

PKNN_MAGIC = b"PKNN"
PKNN_VERSION = 1
_HEADER = struct.Struct("<4sII")


def _manifest(net: PoseNet) -> Dict[str, Any]:
    return {
        "spec": net.spec.model_dump(mode="json"),
        "rng_seed": net.rng_seed,
        "learning_rate": net.learning_rate,
        "layers": [
            {
                "name": name,
                "in": layer.in_channels,
                "out": layer.out_channels,
                "kernel": layer.kernel_size,
                "activation": layer.activation,
            }
            for name, layer in net.layers()
        ],
    }


def save_checkpoint(path: Union[str, Path], net: PoseNet) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    manifest = json.dumps(_manifest(net), sort_keys=True).encode("utf-8")
    params = b"".join(
        np.concatenate([layer.weights.ravel(), layer.bias]).astype("<f8").tobytes() for _, layer in net.layers()
    )
    p.write_bytes(_HEADER.pack(PKNN_MAGIC, PKNN_VERSION, len(manifest)) + manifest + params)
    logger.info("💾 saved checkpoint %s (%d parameters)", p, net.n_parameters)
    return p


def load_checkpoint(path: Union[str, Path]) -> PoseNet:
    p = Path(path)
    raw = p.read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{p}: truncated PKNN header")
    magic, version, manifest_len = _HEADER.unpack_from(raw, 0)
    if magic != PKNN_MAGIC:
        raise CheckpointError(f"{p}: bad magic {magic!r}, expected {PKNN_MAGIC!r}")
    if version != PKNN_VERSION:
        raise CheckpointError(f"{p}: unsupported PKNN version {version}")
    start = _HEADER.size + manifest_len
    try:
        manifest = json.loads(raw[_HEADER.size : start].decode("utf-8"))
        spec = NetworkSpec.model_validate(manifest["spec"])
        net = build_posenet(spec, rng_seed=int(manifest["rng_seed"]), learning_rate=float(manifest["learning_rate"]))
    except (ValueError, KeyError, ValidationError) as e:
        raise CheckpointError(f"{p}: unreadable manifest ({e})") from e

    expected = [(l["name"], l["in"], l["out"], l["kernel"], l["activation"]) for l in manifest.get("layers", [])]
    actual = [(n, l.in_channels, l.out_channels, l.kernel_size, l.activation) for n, l in net.layers()]
    if expected != actual:
        raise CheckpointError(f"{p}: layer manifest does not match its own NetworkSpec")

    body = raw[start:]
    if len(body) != 8 * net.n_parameters:
        raise CheckpointError(f"{p}: expected {8 * net.n_parameters} parameter bytes, found {len(body)}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    offset = 0
    for _, layer in net.layers():
        nw = layer.weights.size
        layer.weights = params[offset : offset + nw].reshape(layer.weights.shape).copy()
        offset += nw
        layer.bias = params[offset : offset + layer.bias.size].copy()
        offset += layer.bias.size
    return net


def check_compatible(net: PoseNet, spec: NetworkSpec) -> None:
    """Raise CheckpointError when a loaded net was trained for a different architecture."""
    if net.spec != spec:
        ours = net.spec.model_dump()
        theirs = spec.model_dump()
        diff = {k: (ours[k], theirs[k]) for k in ours if ours[k] != theirs[k]}
        raise CheckpointError(f"checkpoint does not match the configured network: {diff}")
