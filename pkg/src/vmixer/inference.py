"""Sliding-window inference with Gaussian-weighted tile blending."""

from __future__ import annotations

import numpy as np

from .engine import ShapeError, Tensor, no_grad, softmax
from .model import Model, forward

MAX_OVERLAP = 0.75
SIGMA_FRACTION = 1.0 / 8.0


def tile_starts(extent: int, window: int, overlap: float) -> list:
    """Tile origins along one axis: stride ``(1 - overlap) * window``, last tile flush with the end."""
    if extent < window:
        raise ShapeError(f"volume extent {extent} is smaller than the window {window}")
    stride = max(1, int((1.0 - overlap) * window))
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def gaussian_weights(window_dims) -> np.ndarray:
    """Separable Gaussian centred on the tile, sigma = extent / 8 per axis, peak 1."""
    w = np.ones((), dtype=np.float64)
    for n in window_dims:
        x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
        g = np.exp(-0.5 * (x / (n * SIGMA_FRACTION)) ** 2)
        w = np.multiply.outer(w, g)
    return w


def sliding_window_predict(model: Model, volume, overlap: float = 0.5, tile_batch: int = 2) -> np.ndarray:
    """Class probabilities ``[K, H, W, D]`` for ``volume`` ``[C, H, W, D]`` of any size >= the training dims.

    Each tile's softmax output is accumulated with the Gaussian weight; the sum
    is divided by the accumulated weight and then renormalised per voxel.
    """
    if not 0.0 <= overlap <= MAX_OVERLAP:
        raise ValueError(f"overlap must lie in [0, {MAX_OVERLAP}], got {overlap}")
    vol = np.asarray(volume, dtype=np.float32)
    cfg = model.config
    if vol.ndim != 4 or vol.shape[0] != cfg.input_channels:
        raise ShapeError(f"volume must be [{cfg.input_channels}, H, W, D], got {vol.shape}")
    window = cfg.training_volume_dims
    dims = vol.shape[1:]
    for axis, (n, w) in enumerate(zip(dims, window)):
        if n < w:
            raise ShapeError(f"volume axis {axis} has extent {n}, smaller than the training window {w}")
    grids = [tile_starts(n, w, overlap) for n, w in zip(dims, window)]
    origins = [(a, b, c) for a in grids[0] for b in grids[1] for c in grids[2]]
    weight = gaussian_weights(window)
    acc = np.zeros((cfg.num_classes,) + dims, dtype=np.float64)
    norm = np.zeros(dims, dtype=np.float64)
    with no_grad():
        for i in range(0, len(origins), tile_batch):
            chunk = origins[i : i + tile_batch]
            slices = [tuple(slice(o, o + w) for o, w in zip(origin, window)) for origin in chunk]
            x = np.stack([vol[(slice(None),) + s] for s in slices])
            probs = softmax(forward(model, Tensor(x))["logits"], axis=1).data.astype(np.float64)
            for s, p in zip(slices, probs):
                acc[(slice(None),) + s] += p * weight
                norm[s] += weight
    probs = acc / norm
    probs /= probs.sum(axis=0, keepdims=True)
    return probs.astype(np.float32)


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """Per-voxel argmax over the class axis."""
    return np.argmax(probs, axis=0).astype(np.int64)
