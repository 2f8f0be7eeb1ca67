"""Synthetic ellipsoid volumes standing in for real CT data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NOISE_SIGMA = 0.1
MAX_PLACEMENT_ATTEMPTS = 1000
MAX_LAYOUTS = 20


class PlacementError(RuntimeError):
    """Could not place non-overlapping ellipsoids."""


@dataclass
class VolumeSample:
    image: np.ndarray  # [C_in, H, W, D] float32
    labels: np.ndarray  # [H, W, D] integer
    spacing: tuple = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        if self.image.shape[1:] != self.labels.shape:
            raise ValueError(f"image {self.image.shape} and labels {self.labels.shape} disagree")


def ellipsoid_mask(dims, center, radii) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, n) for n in dims)]
    r2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return r2 <= 1.0


def _place_ellipsoids(rng, dims, num_classes, lo, hi):
    """One layout attempt; None when some ellipsoid found no free spot in ``MAX_PLACEMENT_ATTEMPTS`` draws."""
    labels = np.zeros(dims, dtype=np.int64)
    for k in range(1, num_classes):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            radii = [max(1.0, rng.uniform(lo, hi) * n) for n in dims]
            center = [rng.uniform(min(r, (n - 1) / 2), max(n - 1 - r, (n - 1) / 2)) for r, n in zip(radii, dims)]
            mask = ellipsoid_mask(dims, center, radii)
            if mask.any() and not (labels[mask] != 0).any():
                labels[mask] = k
                break
        else:
            return None
    return labels


def synth_dataset(
    seed: int,
    count: int,
    dims,
    num_classes: int,
    radius_range=(0.15, 0.3),
    in_channels: int = 1,
) -> list:
    """``count`` samples, each with ``num_classes - 1`` disjoint ellipsoids on background 0.

    Radii per axis are drawn as fractions ``radius_range`` of that axis' extent
    (at least 1 voxel); centres keep each ellipsoid inside the volume. A layout
    whose later ellipsoids find no free spot is redrawn from scratch. Images are
    ``label / (K - 1)`` plus Gaussian noise of sigma 0.1.
    """
    dims = tuple(int(n) for n in dims)
    rng = np.random.default_rng(seed)
    lo, hi = radius_range
    samples = []
    for _ in range(count):
        labels = None
        for _layout in range(MAX_LAYOUTS):
            labels = _place_ellipsoids(rng, dims, num_classes, lo, hi)
            if labels is not None:
                break
        if labels is None:
            raise PlacementError(
                f"could not place {num_classes - 1} disjoint ellipsoids in {dims} in {MAX_LAYOUTS} layouts of {MAX_PLACEMENT_ATTEMPTS} attempts each"
            )
        scale = labels.astype(np.float32) / max(num_classes - 1, 1)
        image = scale[None] + rng.normal(0.0, NOISE_SIGMA, size=(in_channels,) + dims).astype(np.float32)
        samples.append(VolumeSample(image.astype(np.float32), labels))
    return samples
