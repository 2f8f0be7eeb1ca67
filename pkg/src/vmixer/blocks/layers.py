"""Convolutional layers around the blocks: stem, down/up-sampling, patch expanding."""

from __future__ import annotations

import numpy as np

from ..engine import ShapeError, Tensor, conv3d, conv3d_transpose, gelu, layer_norm
from .init import conv_kernel, layer_norm_params, zeros

# Composite reduction (4, 4, 2), front-loaded.
STEM_STRIDES = ((2, 2, 1), (2, 2, 2), (1, 1, 1), (1, 1, 1))
STEM_FACTOR = (4, 4, 2)


def init_stem(rng: np.random.Generator, in_channels: int, channels: int) -> dict:
    p = {}
    c_in = in_channels
    for i in range(len(STEM_STRIDES)):
        p[f"conv{i}.weight"] = conv_kernel(rng, (channels, c_in, 3, 3, 3), fan_in=c_in * 27)
        p[f"conv{i}.bias"] = zeros(channels)
        p.update(layer_norm_params(f"norm{i}", channels))
        c_in = channels
    return p


def stem_forward(x: Tensor, p: dict) -> Tensor:
    """``[B, C_in, H, W, D]`` -> ``[B, C1, H/4, W/4, D/2]``; each conv is followed by GELU and layer norm."""
    for axis, n, f in zip("HWD", x.shape[2:], STEM_FACTOR):
        if n % f:
            raise ShapeError(f"stem: axis {axis} extent {n} is not divisible by {f}")
    h = x
    for i, stride in enumerate(STEM_STRIDES):
        h = conv3d(h, p[f"conv{i}.weight"], stride=stride, padding=1, bias=p[f"conv{i}.bias"])
        h = layer_norm(gelu(h), p[f"norm{i}.gamma"], p[f"norm{i}.beta"], axis=1)
    return h


def init_downsample(rng: np.random.Generator, channels: int, out_channels: int | None = None) -> dict:
    out_channels = 2 * channels if out_channels is None else out_channels
    return {
        "weight": conv_kernel(rng, (out_channels, channels, 3, 3, 3), fan_in=channels * 27),
        "bias": zeros(out_channels),
    }


def downsample(t: Tensor, p: dict) -> Tensor:
    """Stride-2, kernel-3 convolution: halves every spatial extent, doubles channels."""
    for axis, n in zip("HWD", t.shape[2:]):
        if n % 2:
            raise ShapeError(f"downsample: axis {axis} extent {n} is odd")
    return conv3d(t, p["weight"], stride=2, padding=1, bias=p["bias"])


def init_upsample(rng: np.random.Generator, channels: int, out_channels: int | None = None) -> dict:
    if out_channels is None:
        if channels % 2:
            raise ShapeError(f"upsample needs an even channel count, got {channels}")
        out_channels = channels // 2
    return {
        "weight": conv_kernel(rng, (channels, out_channels, 2, 2, 2), fan_in=channels),
        "bias": zeros(out_channels),
    }


def upsample(t: Tensor, p: dict) -> Tensor:
    """Kernel-2, stride-2 transposed convolution: doubles every spatial extent, halves channels."""
    return conv3d_transpose(t, p["weight"], stride=2, bias=p["bias"])


def init_patch_expand(rng: np.random.Generator, channels: int, num_classes: int) -> dict:
    return {
        "weight": conv_kernel(rng, (channels, num_classes) + STEM_FACTOR, fan_in=channels),
        "bias": zeros(num_classes),
    }


def patch_expand(t: Tensor, p: dict) -> Tensor:
    """Transposed convolution with kernel = stride = (4, 4, 2) to full-resolution class logits."""
    return conv3d_transpose(t, p["weight"], stride=STEM_FACTOR, bias=p["bias"])


def init_head(rng: np.random.Generator, channels: int, num_classes: int) -> dict:
    return {
        "weight": conv_kernel(rng, (num_classes, channels, 1, 1, 1), fan_in=channels),
        "bias": zeros(num_classes),
    }


def head_forward(t: Tensor, p: dict) -> Tensor:
    """1x1x1 convolution to class logits."""
    return conv3d(t, p["weight"], bias=p["bias"])
