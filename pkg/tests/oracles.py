"""Slow, obviously-correct reference implementations used only by the tests."""

import itertools
from collections import deque

import numpy as np

FACE_OFFSETS = [o for o in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, o)) == 1]


def surface_voxels(mask):
    """Foreground voxels with a background or out-of-volume face neighbour, by explicit neighbour checks."""
    mask = np.asarray(mask, dtype=bool)
    out = []
    for idx in zip(*np.nonzero(mask)):
        for off in FACE_OFFSETS:
            nb = tuple(i + o for i, o in zip(idx, off))
            if any(c < 0 or c >= n for c, n in zip(nb, mask.shape)) or not mask[nb]:
                out.append(idx)
                break
    return np.array(out, dtype=np.float64).reshape(-1, 3)


def directed(src, dst, spacing=(1.0, 1.0, 1.0)):
    sp = np.asarray(spacing, dtype=np.float64)
    diff = (src[:, None, :] - dst[None, :, :]) * sp
    return np.sqrt((diff**2).sum(-1)).min(axis=1)


def percentile_linear(values, q):
    v = np.sort(np.asarray(values, dtype=np.float64))
    pos = q / 100.0 * (len(v) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def hd95(pred, gt, spacing=(1.0, 1.0, 1.0)):
    sp, sg = surface_voxels(pred), surface_voxels(gt)
    return max(percentile_linear(directed(sp, sg, spacing), 95), percentile_linear(directed(sg, sp, spacing), 95))


def nsd(pred, gt, tau=1.0, spacing=(1.0, 1.0, 1.0)):
    sp, sg = surface_voxels(pred), surface_voxels(gt)
    a, b = directed(sp, sg, spacing), directed(sg, sp, spacing)
    return ((a <= tau).sum() + (b <= tau).sum()) / (len(a) + len(b))


def flood_fill_labels(mask):
    """BFS six-connected labelling; labels assigned in raster order of each component's first voxel."""
    mask = np.asarray(mask, dtype=bool)
    labels = np.zeros(mask.shape, dtype=np.int64)
    n = 0
    for start in itertools.product(*(range(s) for s in mask.shape)):
        if not mask[start] or labels[start]:
            continue
        n += 1
        labels[start] = n
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for off in FACE_OFFSETS:
                nb = tuple(c + o for c, o in zip(cur, off))
                if all(0 <= c < s for c, s in zip(nb, mask.shape)) and mask[nb] and not labels[nb]:
                    labels[nb] = n
                    queue.append(nb)
    return labels


def random_blob_pair(rng, dims=(8, 8, 8)):
    """Two smoothed-noise masks, each guaranteed nonempty."""
    from scipy import ndimage

    out = []
    for _ in range(2):
        field = ndimage.gaussian_filter(rng.normal(size=dims), sigma=1.2)
        m = field > np.quantile(field, rng.uniform(0.5, 0.9))
        m[tuple(rng.integers(0, n) for n in dims)] = True
        out.append(m)
    return out


def _shifted(a, axis, d, fill):
    """out[i] = a[i + d] along axis, with ``fill`` beyond the edge."""
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if d > 0:
        src[axis], dst[axis] = slice(d, None), slice(None, -d)
    else:
        src[axis], dst[axis] = slice(None, d), slice(-d, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def watershed(fg, bp, fg_thresh=0.5, seed_thresh=0.5):
    """Step-by-step flood: repeatedly claim the frontier voxel with the lowest
    (boundary, raster index); it inherits the label of whichever labelled
    neighbour was itself labelled earliest."""
    region = fg > fg_thresh
    labels = flood_fill_labels(region & (bp < seed_thresh))
    t_label = np.full(labels.shape, np.inf)
    seeds = np.flatnonzero(labels)
    t_label.reshape(-1)[seeds] = np.arange(len(seeds))
    t = len(seeds)
    raster = np.arange(labels.size).reshape(labels.shape)
    while True:
        best_time = np.full(labels.shape, np.inf)
        best_label = np.zeros(labels.shape, dtype=np.int64)
        for axis in range(labels.ndim):
            for d in (-1, 1):
                nt = _shifted(t_label, axis, d, np.inf)
                nl = _shifted(labels, axis, d, 0)
                take = nt < best_time
                best_time[take] = nt[take]
                best_label[take] = nl[take]
        frontier = region & (labels == 0) & np.isfinite(best_time)
        if not frontier.any():
            return labels
        cand = np.flatnonzero(frontier)
        keys = np.lexsort((raster.reshape(-1)[cand], bp.reshape(-1)[cand]))
        j = np.unravel_index(cand[keys[0]], labels.shape)
        labels[j] = best_label[j]
        t_label[j] = t
        t += 1


def random_prob_volumes(rng, dims=(8, 8, 8)):
    """Smooth foreground probability and a boundary map that is high between blobs."""
    from scipy import ndimage

    fg = ndimage.gaussian_filter(rng.random(dims), 1.0)
    fg = (fg - fg.min()) / (np.ptp(fg) + 1e-12)
    bp = ndimage.gaussian_filter(rng.random(dims), 0.8)
    bp = (bp - bp.min()) / (np.ptp(bp) + 1e-12)
    # quantise so equal priorities occur and tie-breaking is exercised
    return fg, np.round(bp * 8) / 8
