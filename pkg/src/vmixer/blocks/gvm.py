"""Global volume mixer: MLP-mixer layers over all voxel tokens of a stage."""

from __future__ import annotations

import numpy as np

from ..engine import ShapeError, Tensor, add, gelu, layer_norm, linear, permute, reshape
from .init import layer_norm_params, linear_params, prefixed, subset

TOKEN_RATIO = 2.0
CHANNEL_RATIO = 4.0
LAYERS_PER_BLOCK = 2


def init_gvm_layer(rng: np.random.Generator, channels: int, tokens: int) -> dict:
    """Token-mixing weights are bound to ``tokens = H * W * D`` of the stage."""
    th = int(tokens * TOKEN_RATIO)
    ch = int(channels * CHANNEL_RATIO)
    p = {}
    p.update(layer_norm_params("norm1", channels))
    p.update(linear_params(rng, "token1", tokens, th))
    p.update(linear_params(rng, "token2", th, tokens))
    p.update(layer_norm_params("norm2", channels))
    p.update(linear_params(rng, "channel1", channels, ch))
    p.update(linear_params(rng, "channel2", ch, channels))
    return p


def init_gvm_block(rng: np.random.Generator, channels: int, tokens: int) -> dict:
    p = {}
    for i in range(LAYERS_PER_BLOCK):
        p.update(prefixed(f"layer{i}", init_gvm_layer(rng, channels, tokens)))
    return p


def gvm_layer_forward(t: Tensor, p: dict) -> Tensor:
    """One mixer layer on ``[B, C, H, W, D]``.

    The volume is flattened to ``M = H*W*D`` tokens of ``C`` channels. Token
    mixing runs an MLP along M on the channel-normalised features (held as
    ``[B, C, M]``, i.e. already transposed), channel mixing runs an MLP along
    C; both branches are residual.
    """
    B, C, H, W, D = t.shape
    M = H * W * D
    expected = p["token1.weight"].shape[0]
    if M != expected:
        raise ShapeError(
            f"mixer token count mismatch: volume {H}x{W}x{D} gives M={M}, weights were built for M={expected}"
        )
    f = reshape(t, (B, C, M))
    h = layer_norm(f, p["norm1.gamma"], p["norm1.beta"], axis=1)
    h = linear(gelu(linear(h, p["token1.weight"], p["token1.bias"])), p["token2.weight"], p["token2.bias"])
    f = add(f, h)

    g = permute(f, (0, 2, 1))
    h = layer_norm(g, p["norm2.gamma"], p["norm2.beta"], axis=-1)
    h = linear(gelu(linear(h, p["channel1.weight"], p["channel1.bias"])), p["channel2.weight"], p["channel2.bias"])
    out = add(g, h)
    return reshape(permute(out, (0, 2, 1)), (B, C, H, W, D))


def gvm_block_forward(t: Tensor, params: dict) -> Tensor:
    x = t
    for i in range(LAYERS_PER_BLOCK):
        x = gvm_layer_forward(x, subset(params, f"layer{i}"))
    return x
