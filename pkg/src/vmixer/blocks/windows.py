"""Window geometry for local volume attention: partition, reverse, shift masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import ShapeError, Tensor, permute, reshape

MASK_VALUE = -1e9


@dataclass(frozen=True)
class WindowSpec:
    window_dims: tuple = (4, 4, 4)
    shift: tuple = (0, 0, 0)

    def __post_init__(self):
        wd = tuple(int(w) for w in self.window_dims)
        sh = tuple(int(s) for s in self.shift)
        object.__setattr__(self, "window_dims", wd)
        object.__setattr__(self, "shift", sh)
        if len(wd) != len(sh):
            raise ValueError(f"window {wd} and shift {sh} differ in rank")
        if any(w <= 0 for w in wd):
            raise ValueError(f"window extents must be positive, got {wd}")
        if any(s < 0 or s >= w for s, w in zip(sh, wd)):
            raise ValueError(f"shift {sh} must satisfy 0 <= shift < window {wd}")

    @classmethod
    def half_shift(cls, window_dims) -> "WindowSpec":
        """Window with the conventional shift of half its extent (floored)."""
        window_dims = tuple(window_dims)
        return cls(window_dims, tuple(w // 2 for w in window_dims))

    @property
    def tokens(self) -> int:
        return int(np.prod(self.window_dims))

    @property
    def is_shifted(self) -> bool:
        return any(self.shift)

    def fitted(self, volume_dims) -> "WindowSpec":
        """Clamp to a volume smaller than the window; clamped axes lose their shift."""
        wd, sh = [], []
        for n, w, s in zip(volume_dims, self.window_dims, self.shift):
            if n <= w:
                wd.append(n)
                sh.append(0)
            else:
                wd.append(w)
                sh.append(s)
        return WindowSpec(tuple(wd), tuple(sh))


def _check_divisible(volume_dims, window_dims) -> None:
    for axis, (n, w) in zip("HWD", zip(volume_dims, window_dims)):
        if n % w:
            raise ShapeError(f"axis {axis}: extent {n} is not divisible by window extent {w}")


def window_partition(t: Tensor, spec: WindowSpec) -> Tensor:
    """``[B, C, H, W, D]`` -> ``[B * nw, wh * ww * wd, C]``, windows and tokens in raster order."""
    B, C, H, W, D = t.shape
    wh, ww, wd = spec.window_dims
    _check_divisible((H, W, D), spec.window_dims)
    x = reshape(t, (B, C, H // wh, wh, W // ww, ww, D // wd, wd))
    x = permute(x, (0, 2, 4, 6, 3, 5, 7, 1))
    return reshape(x, (-1, wh * ww * wd, C))


def window_reverse(windows: Tensor, spec: WindowSpec, volume_dims) -> Tensor:
    """Inverse of :func:`window_partition`."""
    H, W, D = volume_dims
    wh, ww, wd = spec.window_dims
    _check_divisible(volume_dims, spec.window_dims)
    nw = (H // wh) * (W // ww) * (D // wd)
    total, n, C = windows.shape
    if n != wh * ww * wd or total % nw:
        raise ShapeError(
            f"{windows.shape} windows are inconsistent with volume {volume_dims} and window {spec.window_dims}"
        )
    B = total // nw
    x = reshape(windows, (B, H // wh, W // ww, D // wd, wh, ww, wd, C))
    x = permute(x, (0, 7, 1, 4, 2, 5, 3, 6))
    return reshape(x, (B, C, H, W, D))


def region_labels(volume_dims, spec: WindowSpec) -> np.ndarray:
    """Label each voxel by the pre-shift region it came from.

    Each axis splits into ``[0, n-w)``, ``[n-w, n-s)``, ``[n-s, n)``; a cyclic
    shift by ``-s`` brings the last two bands together inside the final window.
    """
    labels = np.zeros(tuple(volume_dims), dtype=np.int64)
    for axis, (n, w, s) in enumerate(zip(volume_dims, spec.window_dims, spec.shift)):
        band = np.zeros(n, dtype=np.int64)
        if s:
            band[n - w : n - s] = 1
            band[n - s :] = 2
        shape = [1] * len(volume_dims)
        shape[axis] = n
        labels = labels * 3 + band.reshape(shape)
    return labels


def _partition_array(a: np.ndarray, window_dims) -> np.ndarray:
    """Window-partition a plain ``[*volume]`` array into ``[nw, tokens]`` (any rank)."""
    nd = a.ndim
    split = []
    for n, w in zip(a.shape, window_dims):
        split += [n // w, w]
    a = a.reshape(split)
    order = [2 * i for i in range(nd)] + [2 * i + 1 for i in range(nd)]
    return a.transpose(order).reshape(-1, int(np.prod(window_dims)))


def build_shift_mask(volume_dims, spec: WindowSpec) -> np.ndarray:
    """Additive attention mask ``[nw, tokens, tokens]`` for shifted windows.

    Pairs whose voxels came from different pre-shift regions get ``-1e9``,
    same-region pairs 0. Works for any number of spatial axes.
    """
    if not spec.is_shifted:
        raise ValueError("shift mask requested for an unshifted window; use the regular window path")
    _check_divisible(volume_dims, spec.window_dims)
    labels = region_labels(volume_dims, spec)
    # labels live on the rolled grid: band 2 holds the voxels that wrapped around
    win = _partition_array(labels, spec.window_dims)
    diff = win[:, :, None] != win[:, None, :]
    return np.where(diff, MASK_VALUE, 0.0).astype(np.float32)
