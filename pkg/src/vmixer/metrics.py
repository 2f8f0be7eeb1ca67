"""Overlap and boundary metrics: DSC, Jaccard, HD95, NSD, cell-count accuracy.

Surfaces use six-connectivity: a foreground voxel is on the surface when any
face neighbour is background or outside the volume. Distances are Euclidean
between voxel centres, scaled by the voxel spacing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


class EmptyMaskError(ValueError):
    """A distance metric was asked about an empty mask."""


def _pair(pred, gt) -> tuple:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask dims differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def dsc(pred, gt) -> float:
    """``2|A n B| / (|A| + |B|)``; 1.0 when both masks are empty."""
    pred, gt = _pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / total


def jaccard(pred, gt) -> float:
    """``|A n B| / |A u B|``; 1.0 when both masks are empty."""
    pred, gt = _pair(pred, gt)
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(pred, gt).sum()) / union


def surface_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    interior = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~interior


def extract_surface(mask) -> np.ndarray:
    """Surface voxel coordinates ``[S, ndim]`` in raster order."""
    return np.argwhere(surface_mask(mask))


def _surface_distances(src_surface: np.ndarray, dst_surface: np.ndarray, spacing) -> np.ndarray:
    """Distance from every ``src`` surface voxel to the nearest ``dst`` surface voxel."""
    edt = ndimage.distance_transform_edt(~dst_surface, sampling=spacing)
    return edt[src_surface]


def directed_distances(pred, gt, spacing=None) -> tuple:
    """``(pred -> gt, gt -> pred)`` nearest-surface distances."""
    pred, gt = _pair(pred, gt)
    if not pred.any() and not gt.any():
        raise EmptyMaskError("both masks are empty")
    if not pred.any():
        raise EmptyMaskError("prediction mask is empty")
    if not gt.any():
        raise EmptyMaskError("ground-truth mask is empty")
    spacing = tuple(float(s) for s in spacing) if spacing is not None else (1.0,) * pred.ndim
    sp, sg = surface_mask(pred), surface_mask(gt)
    return _surface_distances(sp, sg, spacing), _surface_distances(sg, sp, spacing)


def hd95(pred, gt, spacing=None) -> float:
    """Max of the two directed 95th percentiles (linear interpolation) of surface distances."""
    d_pg, d_gp = directed_distances(pred, gt, spacing)
    return float(max(np.percentile(d_pg, 95), np.percentile(d_gp, 95)))


def nsd(pred, gt, tau: float = 1.0, spacing=None) -> float:
    """Fraction of both surfaces lying within ``tau`` of the other surface."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    d_pg, d_gp = directed_distances(pred, gt, spacing)
    return float((np.count_nonzero(d_pg <= tau) + np.count_nonzero(d_gp <= tau)) / (d_pg.size + d_gp.size))


def _instance_ids(labels: np.ndarray) -> np.ndarray:
    ids = np.unique(labels)
    return ids[ids > 0]


def match_instances(pred_instances, gt_instances) -> dict:
    """Map each GT instance id to the pred id with the largest overlap (ties -> lower id), or 0."""
    pred = np.asarray(pred_instances)
    gt = np.asarray(gt_instances)
    if pred.shape != gt.shape:
        raise ValueError(f"instance volumes differ: {pred.shape} vs {gt.shape}")
    out = {}
    for g in _instance_ids(gt):
        under = pred[gt == g]
        under = under[under > 0]
        if under.size == 0:
            out[int(g)] = 0
            continue
        ids, counts = np.unique(under, return_counts=True)
        out[int(g)] = int(ids[np.argmax(counts)])  # unique is sorted, argmax takes the first max
    return out


def cell_count_accuracy(pred_instances, gt_instances, threshold: float = 0.5, metric: str = "JI") -> float:
    """Fraction of GT instances whose matched pair scores above ``threshold``.

    Returns 1.0 when the ground truth has no instances.
    """
    score = {"JI": jaccard, "DSC": dsc}[metric.upper()]
    pred = np.asarray(pred_instances)
    gt = np.asarray(gt_instances)
    matches = match_instances(pred, gt)
    if not matches:
        return 1.0
    hits = 0
    for g, p in matches.items():
        if p and score(pred == p, gt == g) > threshold:
            hits += 1
    return hits / len(matches)


def cell_count_report(pred_instances, gt_instances, thresholds=(0.5, 0.7), metric: str = "JI") -> dict:
    """Cell-count accuracy at several thresholds, flagging the zero-GT-instance convention."""
    pred = np.asarray(pred_instances)
    gt = np.asarray(gt_instances)
    n_gt = int(_instance_ids(gt).size)
    return {
        "metric": metric.upper(),
        "gt_instances": n_gt,
        "pred_instances": int(_instance_ids(pred).size),
        "empty_gt": n_gt == 0,
        "accuracy": {str(t): cell_count_accuracy(pred, gt, t, metric) for t in thresholds},
    }


@dataclass
class ClassMetrics:
    label: int
    present: bool
    dsc: Optional[float] = None
    jaccard: Optional[float] = None
    hd95: Optional[float] = None
    nsd: Optional[float] = None


@dataclass
class MetricReport:
    classes: list = field(default_factory=list)
    tau: float = 1.0
    spacing: tuple = (1.0, 1.0, 1.0)

    def _mean(self, attr: str) -> Optional[float]:
        vals = [getattr(c, attr) for c in self.classes if c.present and getattr(c, attr) is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_dsc(self):
        return self._mean("dsc")

    @property
    def mean_jaccard(self):
        return self._mean("jaccard")

    @property
    def mean_hd95(self):
        return self._mean("hd95")

    @property
    def mean_nsd(self):
        return self._mean("nsd")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "spacing": list(self.spacing),
            "classes": [vars(c) for c in self.classes],
            "mean": {
                "dsc": self.mean_dsc,
                "jaccard": self.mean_jaccard,
                "hd95": self.mean_hd95,
                "nsd": self.mean_nsd,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self, per_class: bool = True) -> str:
        def fmt(v):
            return "absent" if v is None else f"{v:.4f}"

        rows = [("class", "DSC", "JI", "HD95", "NSD")]
        if per_class:
            for c in self.classes:
                rows.append((str(c.label), fmt(c.dsc), fmt(c.jaccard), fmt(c.hd95), fmt(c.nsd)))
        rows.append(("mean", fmt(self.mean_dsc), fmt(self.mean_jaccard), fmt(self.mean_hd95), fmt(self.mean_nsd)))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows) + "\n"


def evaluate(pred_labels, gt_labels, num_classes: int, spacing=None, tau: float = 1.0) -> MetricReport:
    """Per-foreground-class metrics for classes present in the ground truth.

    A class present in the GT but missing from the prediction gets DSC/JI 0 and
    its distance metrics marked absent; absent entries are left out of the means.
    """
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ValueError(f"label volumes differ: {pred.shape} vs {gt.shape}")
    spacing = tuple(float(s) for s in spacing) if spacing is not None else (1.0,) * gt.ndim
    report = MetricReport(tau=tau, spacing=spacing)
    for k in range(1, num_classes):
        g = gt == k
        if not g.any():
            continue
        p = pred == k
        row = ClassMetrics(k, True, dsc(p, g), jaccard(p, g))
        if p.any():
            row.hd95 = hd95(p, g, spacing)
            row.nsd = nsd(p, g, tau, spacing)
        report.classes.append(row)
    return report
