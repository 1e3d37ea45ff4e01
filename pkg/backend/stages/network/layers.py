# backend/stages/network/layers.py
"""
Forward and backward passes of one Conv3Layer.

The convolution is a sum over the k³ kernel offsets of channel-mixing
tensordots against shifted windows of the zero-padded input.
"""
from __future__ import annotations

import itertools
from typing import Optional, Tuple

import numpy as np

from common.errors import NetworkShapeError
from stages.network.models import Activation, Conv3Layer, Tensor4


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def init_layer(
    rng: np.random.Generator, in_channels: int, out_channels: int, kernel_size: int, activation: Activation
) -> Conv3Layer:
    """Uniform ±sqrt(6 / (fan_in + fan_out)) weights, zero bias."""
    k3 = kernel_size**3
    limit = np.sqrt(6.0 / (in_channels * k3 + out_channels * k3))
    weights = rng.uniform(-limit, limit, size=(out_channels, in_channels, kernel_size, kernel_size, kernel_size))
    return Conv3Layer(weights=weights, bias=np.zeros(out_channels), activation=activation)


def _check_input(layer: Conv3Layer, x: Tensor4) -> Tensor4:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise NetworkShapeError(f"conv input must be (C, nx, ny, nz), got shape {x.shape}")
    if x.shape[0] != layer.in_channels:
        raise NetworkShapeError(f"conv input has {x.shape[0]} channels, layer expects {layer.in_channels}")
    return x


def _pad(x: Tensor4, p: int) -> Tensor4:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))


def _offsets(k: int):
    return itertools.product(range(k), repeat=3)


def preactivation(layer: Conv3Layer, x: Tensor4) -> Tensor4:
    x = _check_input(layer, x)
    k = layer.kernel_size
    _, nx, ny, nz = x.shape
    xp = _pad(x, k // 2)
    out = np.empty((layer.out_channels, nx, ny, nz))
    out[:] = layer.bias[:, None, None, None]
    for a, b, d in _offsets(k):
        out += np.tensordot(layer.weights[:, :, a, b, d], xp[:, a : a + nx, b : b + ny, d : d + nz], axes=(1, 0))
    return out


def conv3_forward(layer: Conv3Layer, x: Tensor4) -> Tensor4:
    pre = preactivation(layer, x)
    return relu(pre) if layer.activation == "relu" else pre


def conv3_backward(
    layer: Conv3Layer, x: Tensor4, grad_out: Tensor4, output: Optional[Tensor4] = None
) -> Tuple[Tensor4, np.ndarray, np.ndarray]:
    """
    Exact gradients (input, weights, bias) of a scalar whose gradient w.r.t. the
    layer output is `grad_out`. Pass the forward `output` to skip recomputing it.
    """
    x = _check_input(layer, x)
    _, nx, ny, nz = x.shape
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (layer.out_channels, nx, ny, nz):
        raise NetworkShapeError(f"grad_out shape {grad_out.shape} != {(layer.out_channels, nx, ny, nz)}")

    if layer.activation == "relu":
        y = output if output is not None else preactivation(layer, x)
        g = grad_out * (y > 0)
    else:
        g = grad_out

    k = layer.kernel_size
    p = k // 2
    xp = _pad(x, p)
    grad_w = np.empty_like(layer.weights)
    grad_xp = np.zeros_like(xp)
    for a, b, d in _offsets(k):
        window = (slice(None), slice(a, a + nx), slice(b, b + ny), slice(d, d + nz))
        grad_w[:, :, a, b, d] = np.tensordot(g, xp[window], axes=([1, 2, 3], [1, 2, 3]))
        grad_xp[window] += np.tensordot(layer.weights[:, :, a, b, d], g, axes=(0, 0))
    grad_b = g.sum(axis=(1, 2, 3))
    grad_x = grad_xp[:, p : p + nx, p : p + ny, p : p + nz] if p else grad_xp
    return grad_x, grad_w, grad_b
