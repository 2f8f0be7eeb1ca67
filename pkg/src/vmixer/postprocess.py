"""Instance extraction from foreground/boundary probabilities (connected components + watershed)."""

from __future__ import annotations

import heapq

import numpy as np
from scipy import ndimage


class NoSeedsError(ValueError):
    """The seed mask is empty; thresholds are too strict for this volume."""


def connected_components(mask) -> np.ndarray:
    """Six-connected labelling; labels 1..n follow first occurrence in raster order."""
    mask = np.asarray(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    labels, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return labels.astype(np.int64)
    # relabel by first raster occurrence; ndimage already scans in raster order,
    # but the order is an invariant here, not an implementation detail
    flat = labels.reshape(-1)
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    order = ids[np.argsort(first)]
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[order] = np.arange(1, n + 1)
    return remap[labels]


def instance_watershed(fg_prob, boundary_prob, fg_thresh: float = 0.5, seed_thresh: float = 0.5) -> np.ndarray:
    """Marker-based priority flood over the foreground.

    Seeds are the connected components of ``fg > fg_thresh & boundary < seed_thresh``.
    They grow through six-connected foreground voxels in ascending order of
    ``boundary_prob``; equal priorities resolve by raster index, then by push
    order. Background and unreachable voxels stay 0.
    """
    fg = np.asarray(fg_prob, dtype=np.float64)
    bp = np.asarray(boundary_prob, dtype=np.float64)
    if fg.shape != bp.shape:
        raise ValueError(f"probability volumes differ: {fg.shape} vs {bp.shape}")
    for name, t in (("fg_thresh", fg_thresh), ("seed_thresh", seed_thresh)):
        if not 0.0 < t < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {t}")

    region = fg > fg_thresh
    labels = connected_components(region & (bp < seed_thresh))
    if labels.max() == 0:
        raise NoSeedsError(
            f"no seeds with fg > {fg_thresh} and boundary < {seed_thresh}; try lowering fg_thresh or raising seed_thresh"
        )

    shape = fg.shape
    flat_labels = labels.reshape(-1)
    flat_region = region.reshape(-1)
    flat_bp = bp.reshape(-1)
    strides = [int(np.prod(shape[a + 1 :])) for a in range(len(shape))]

    heap = []
    counter = 0

    def push_neighbours(idx: int, label: int) -> None:
        nonlocal counter
        rem = idx
        for axis, stride in enumerate(strides):
            c, rem = divmod(rem, stride)
            for d in (-1, 1):
                if not 0 <= c + d < shape[axis]:
                    continue
                j = idx + d * stride
                if flat_region[j] and flat_labels[j] == 0:
                    heapq.heappush(heap, (flat_bp[j], j, counter, label))
                    counter += 1

    for idx in np.flatnonzero(flat_labels):
        push_neighbours(int(idx), int(flat_labels[idx]))
    while heap:
        _, j, _, label = heapq.heappop(heap)
        if flat_labels[j]:
            continue
        flat_labels[j] = label
        push_neighbours(j, label)
    return flat_labels.reshape(shape)
