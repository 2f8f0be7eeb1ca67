"""Local volume self-attention: windowed MSA followed by shifted-window MSA."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..engine import (
    ShapeError,
    Tensor,
    add,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    permute,
    reshape,
    roll,
    softmax,
    take,
    transpose,
)
from .init import layer_norm_params, linear_params, prefixed, subset, trunc_normal
from .windows import WindowSpec, build_shift_mask, window_partition, window_reverse

MLP_RATIO = 4.0


def relative_position_index(window_dims) -> np.ndarray:
    """``[N, N]`` index into a ``prod(2w - 1)``-row bias table."""
    grids = np.meshgrid(*(np.arange(w) for w in window_dims), indexing="ij")
    coords = np.stack([g.reshape(-1) for g in grids], axis=1)
    rel = coords[:, None, :] - coords[None, :, :] + (np.asarray(window_dims) - 1)
    idx = np.zeros(rel.shape[:2], dtype=np.int64)
    for axis, w in enumerate(window_dims):
        idx = idx * (2 * w - 1) + rel[..., axis]
    return idx


def bias_table_size(window_dims) -> int:
    return int(np.prod([2 * w - 1 for w in window_dims]))


def init_attention_layer(rng: np.random.Generator, channels: int, heads: int, window_dims, rel_bias: bool = True) -> dict:
    if channels % heads:
        raise ShapeError(f"channels {channels} not divisible by head count {heads}")
    hidden = int(channels * MLP_RATIO)
    p = {}
    p.update(layer_norm_params("norm1", channels))
    p.update(linear_params(rng, "qkv", channels, 3 * channels))
    if rel_bias:
        p["rel_bias"] = trunc_normal(rng, (bias_table_size(window_dims), heads))
    p.update(linear_params(rng, "proj", channels, channels))
    p.update(layer_norm_params("norm2", channels))
    p.update(linear_params(rng, "fc1", channels, hidden))
    p.update(linear_params(rng, "fc2", hidden, channels))
    return p


def init_lvsa_block(rng: np.random.Generator, channels: int, heads: int, spec: WindowSpec, rel_bias: bool = True) -> dict:
    """Parameters for one block: a regular-window layer and a shifted-window layer."""
    p = prefixed("regular", init_attention_layer(rng, channels, heads, spec.window_dims, rel_bias))
    p.update(prefixed("shifted", init_attention_layer(rng, channels, heads, spec.window_dims, rel_bias)))
    return p


def window_attention(
    x: Tensor,
    p: dict,
    heads: int,
    mask: Optional[np.ndarray] = None,
    rel_index: Optional[np.ndarray] = None,
    return_weights: bool = False,
):
    """Multi-head self-attention inside each window.

    ``x`` is ``[B * nw, N, C]``; ``mask`` (``[nw, N, N]``) is added to the
    logits before the softmax. With ``return_weights`` the post-softmax
    attention ``[B * nw, heads, N, N]`` is returned as well.
    """
    Bn, N, C = x.shape
    hd = C // heads
    qkv = linear(x, p["qkv.weight"], p["qkv.bias"])
    qkv = permute(reshape(qkv, (Bn, N, 3, heads, hd)), (2, 0, 3, 1, 4))
    q = mul(qkv[0], hd ** -0.5)
    k, v = qkv[1], qkv[2]
    logits = matmul(q, transpose(k))
    if "rel_bias" in p:
        if rel_index is None:
            raise ValueError("relative position bias needs rel_index")
        bias = take(p["rel_bias"], rel_index.reshape(-1))
        logits = add(logits, permute(reshape(bias, (N, N, heads)), (2, 0, 1)))
    if mask is not None:
        nw = mask.shape[0]
        logits = reshape(logits, (Bn // nw, nw, heads, N, N))
        logits = add(logits, Tensor(mask[:, None]))
        logits = reshape(logits, (Bn, heads, N, N))
    weights = softmax(logits, axis=-1)
    out = permute(matmul(weights, v), (0, 2, 1, 3))
    out = linear(reshape(out, (Bn, N, C)), p["proj.weight"], p["proj.bias"])
    return (out, weights) if return_weights else out


def _mlp(x: Tensor, p: dict) -> Tensor:
    h = permute(x, (0, 2, 3, 4, 1))
    h = layer_norm(h, p["norm2.gamma"], p["norm2.beta"], axis=-1)
    h = linear(gelu(linear(h, p["fc1.weight"], p["fc1.bias"])), p["fc2.weight"], p["fc2.bias"])
    return add(x, permute(h, (0, 4, 1, 2, 3)))


def attention_layer_forward(x: Tensor, p: dict, spec: WindowSpec, heads: int) -> Tensor:
    """One pre-norm transformer layer on ``[B, C, H, W, D]``; shifted when ``spec`` has a shift."""
    dims = x.shape[2:]
    h = layer_norm(x, p["norm1.gamma"], p["norm1.beta"], axis=1)
    mask = None
    if spec.is_shifted:
        h = roll(h, tuple(-s for s in spec.shift), (2, 3, 4))
        mask = build_shift_mask(dims, spec)
    tokens = window_partition(h, spec)
    rel_index = relative_position_index(spec.window_dims) if "rel_bias" in p else None
    attended = window_attention(tokens, p, heads, mask=mask, rel_index=rel_index)
    h = window_reverse(attended, spec, dims)
    if spec.is_shifted:
        h = roll(h, spec.shift, (2, 3, 4))
    return _mlp(add(x, h), p)


def lvsa_block_forward(t: Tensor, params: dict, spec: WindowSpec, heads: int) -> Tensor:
    """Regular-window layer then shifted-window layer; output shape equals input shape."""
    regular = WindowSpec(spec.window_dims, (0,) * len(spec.window_dims))
    x = attention_layer_forward(t, subset(params, "regular"), regular, heads)
    return attention_layer_forward(x, subset(params, "shifted"), spec, heads)
