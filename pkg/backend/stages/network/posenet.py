# backend/stages/network/posenet.py
from __future__ import annotations

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from common.errors import GridMismatchError, NetworkShapeError
from stages.network.layers import conv3_backward, conv3_forward, init_layer
from stages.network.models import (
    Conv3Layer,
    ForwardCache,
    Gradients,
    NetworkSpec,
    PoseHeatmaps3D,
    PoseNet,
    Tensor4,
)
from stages.voxel.fusion import check_same_grid
from stages.voxel.models import VoxelField

logger = logging.getLogger(__name__)


def build_posenet(spec: NetworkSpec, rng_seed: int = 0, learning_rate: float = 0.01) -> PoseNet:
    """Seeded initialization; the same (spec, seed) always yields the same parameters."""
    rng = np.random.default_rng(rng_seed)
    k = spec.kernel_size

    stem: List[Conv3Layer] = []
    if spec.uses_audio:
        c = spec.audio_in_channels
        for w in spec.stem_widths:
            stem.append(init_layer(rng, c, w, k, "relu"))
            c = w

    stages: List[List[Conv3Layer]] = []
    for s in range(spec.n_stages):
        c = spec.stage_in_channels(s)
        block: List[Conv3Layer] = []
        for w in spec.stage_widths:
            block.append(init_layer(rng, c, w, k, "relu"))
            c = w
        block.append(init_layer(rng, c, spec.n_landmarks, 1, "identity"))
        stages.append(block)

    net = PoseNet(spec=spec, stem=stem, stages=stages, learning_rate=learning_rate, rng_seed=rng_seed)
    logger.debug("built PoseNet: %d stages, %d parameters, inputs=%s", spec.n_stages, net.n_parameters, spec.inputs)
    return net


# -------------------------
# Array-level passes
# -------------------------
def _spatial(arrays: Sequence[Tensor4], what: str) -> Tuple[int, int, int]:
    shapes = {tuple(a.shape[1:]) for a in arrays}
    if len(shapes) != 1:
        raise GridMismatchError(f"{what}: inputs disagree on spatial shape {sorted(shapes)}")
    return shapes.pop()


def forward_arrays(
    net: PoseNet, audio: Sequence[Tensor4], visual: Optional[Tensor4]
) -> Tuple[List[Tensor4], ForwardCache]:
    spec = net.spec
    cache = ForwardCache()
    parts: List[Tensor4] = []

    if spec.uses_audio:
        if not audio:
            raise NetworkShapeError(f"inputs={spec.inputs} needs at least one audio field")
        for i, x in enumerate(audio):
            if x.ndim != 4 or x.shape[0] != spec.audio_in_channels:
                raise NetworkShapeError(
                    f"audio field {i} has shape {x.shape}, expected {spec.audio_in_channels} channel(s)"
                )
        stem_outs = []
        for x in audio:
            acts = [np.asarray(x, dtype=np.float64)]
            for layer in net.stem:
                acts.append(conv3_forward(layer, acts[-1]))
            cache.stem_acts.append(acts)
            stem_outs.append(acts[-1])
        stacked = np.stack(stem_outs)
        cache.winner = np.argmax(stacked, axis=0)
        parts.append(stacked.max(axis=0))

    if spec.uses_visual:
        if visual is None:
            raise NetworkShapeError(f"inputs={spec.inputs} needs a visual field")
        if visual.ndim != 4 or visual.shape[0] != spec.n_landmarks:
            raise NetworkShapeError(f"visual field has shape {visual.shape}, expected {spec.n_landmarks} channel(s)")
        parts.append(np.asarray(visual, dtype=np.float64))

    _spatial(parts, "forward")
    features = np.concatenate(parts, axis=0)
    cache.features = features

    outputs: List[Tensor4] = []
    prev: Optional[Tensor4] = None
    for block in net.stages:
        x = features if prev is None else np.concatenate([features, prev], axis=0)
        acts = [x]
        for layer in block:
            acts.append(conv3_forward(layer, acts[-1]))
        cache.stage_acts.append(acts)
        prev = acts[-1]
        outputs.append(prev)
    return outputs, cache


def backward(net: PoseNet, cache: ForwardCache, grad_outputs: Sequence[Tensor4]) -> Gradients:
    """
    Parameter gradients in `net.layers()` order given d(loss)/d(stage output) for every stage.
    The max fusion passes each voxel's gradient to the first pair that attained the maximum.
    """
    if len(grad_outputs) != len(net.stages):
        raise NetworkShapeError(f"{len(grad_outputs)} output gradients for {len(net.stages)} stages")
    features = cache.features
    n_feat = features.shape[0]
    grad_features = np.zeros_like(features)

    stage_grads: List[Gradients] = [[] for _ in net.stages]
    carry: Optional[Tensor4] = None
    for s in reversed(range(len(net.stages))):
        block = net.stages[s]
        acts = cache.stage_acts[s]
        g = grad_outputs[s] if carry is None else grad_outputs[s] + carry
        per_layer: Gradients = []
        for i in reversed(range(len(block))):
            g, gw, gb = conv3_backward(block[i], acts[i], g, output=acts[i + 1])
            per_layer.append((gw, gb))
        stage_grads[s] = per_layer[::-1]
        grad_features += g[:n_feat]
        carry = g[n_feat:] if s > 0 else None

    stem_grads: Gradients = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in net.stem]
    if net.spec.uses_audio:
        g_fused = grad_features[: net.spec.stem_widths[-1]]
        for p, acts in enumerate(cache.stem_acts):
            g = np.where(cache.winner == p, g_fused, 0.0)
            if not np.any(g):
                continue
            for i in reversed(range(len(net.stem))):
                g, gw, gb = conv3_backward(net.stem[i], acts[i], g, output=acts[i + 1])
                stem_grads[i][0][...] += gw
                stem_grads[i][1][...] += gb

    return stem_grads + [pair for block in stage_grads for pair in block]


def stage_loss(outputs: Sequence[Tensor4], target: Tensor4) -> Tuple[float, List[Tensor4]]:
    """Σ_stages mean((out − target)²) and its gradient w.r.t. each stage output."""
    total = 0.0
    grads: List[Tensor4] = []
    for s, out in enumerate(outputs):
        if out.shape != target.shape:
            raise NetworkShapeError(f"stage {s} output shape {out.shape} != target shape {target.shape}")
        diff = out - target
        total += float(np.mean(diff**2))
        grads.append(2.0 * diff / diff.size)
    return total, grads


def sgd_step(net: PoseNet, grads: Gradients, lr: float) -> None:
    layers = [layer for _, layer in net.layers()]
    if len(grads) != len(layers):
        raise NetworkShapeError(f"{len(grads)} gradients for {len(layers)} layers")
    if lr == 0:
        return
    for layer, (gw, gb) in zip(layers, grads):
        layer.weights -= lr * gw
        layer.bias -= lr * gb


# -------------------------
# Field-level API
# -------------------------
def field_arrays(
    net: PoseNet, audio_fields: Sequence[VoxelField], visual: Optional[VoxelField]
) -> Tuple[List[Tensor4], Optional[Tensor4], VoxelField]:
    fields: List[VoxelField] = []
    if net.spec.uses_audio:
        fields.extend(audio_fields)
    if net.spec.uses_visual and visual is not None:
        fields.append(visual)
    if not fields:
        raise NetworkShapeError(f"inputs={net.spec.inputs}: no input fields given")
    ref = fields[0]
    for i, f in enumerate(fields[1:], start=1):
        if f.grid != ref.grid:
            raise GridMismatchError(f"forward: input {i} grid {f.grid} differs from {ref.grid}")
    if net.spec.uses_audio and audio_fields:
        check_same_grid(list(audio_fields), "forward audio")
    audio = [f.values for f in audio_fields] if net.spec.uses_audio else []
    vis = visual.values if (net.spec.uses_visual and visual is not None) else None
    return audio, vis, ref


def forward(
    net: PoseNet, audio_fields: Sequence[VoxelField], visual: Optional[VoxelField]
) -> List[PoseHeatmaps3D]:
    """One N-channel heatmap field per stage, on the input grid."""
    audio, vis, ref = field_arrays(net, audio_fields, visual)
    outputs, _ = forward_arrays(net, audio, vis)
    return [
        VoxelField(grid=ref.grid, values=out, metadata={"kind": "pose", "stage": s})
        for s, out in enumerate(outputs)
    ]


def predict(net: PoseNet, audio_fields: Sequence[VoxelField], visual: Optional[VoxelField]) -> PoseHeatmaps3D:
    return forward(net, audio_fields, visual)[-1]


def loss(predictions: Sequence[PoseHeatmaps3D], target: PoseHeatmaps3D) -> float:
    for s, p in enumerate(predictions):
        if p.grid != target.grid:
            raise NetworkShapeError(f"stage {s} grid {p.grid} != target grid {target.grid}")
    total, _ = stage_loss([p.values for p in predictions], target.values)
    return total
