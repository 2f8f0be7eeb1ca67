"""Segmentation losses and the weighted deep-supervision sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import ShapeError, Tensor, add, div, log_softmax, mean, mul, softmax, sub, sum

DICE_EPS = 1e-5


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """``[B, *spatial]`` integer labels -> ``[B, K, *spatial]`` float indicator."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    eye = np.eye(num_classes, dtype=np.float32)
    return np.moveaxis(eye[labels], -1, 1)


def _check(logits: Tensor, labels: np.ndarray) -> None:
    if logits.shape[:1] + logits.shape[2:] != labels.shape:
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree on batch/spatial dims")


def soft_dice_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """``1 - mean_c (2 sum p*g + eps) / (sum p + sum g + eps)`` over foreground classes.

    Sums run over the whole batch and volume; ``p`` is the class softmax.
    """
    labels = np.asarray(labels)
    _check(logits, labels)
    K = logits.shape[1]
    probs = softmax(logits, axis=1)
    g = Tensor(one_hot(labels, K))
    axes = (0,) + tuple(range(2, logits.ndim))
    inter = sum(mul(probs, g), axis=axes)
    denom = add(sum(probs, axis=axes), sum(g, axis=axes))
    dice = div(add(mul(inter, 2.0), DICE_EPS), add(denom, DICE_EPS))
    fg = dice[1:] if K > 1 else dice
    return sub(1.0, mean(fg))


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean voxelwise negative log-likelihood of the true class, computed in log space."""
    labels = np.asarray(labels)
    _check(logits, labels)
    K = logits.shape[1]
    if labels.size and labels.max() >= K:
        raise ValueError(f"label {labels.max()} out of range for {K} classes")
    logp = log_softmax(logits, axis=1)
    picked = sum(mul(logp, Tensor(one_hot(labels, K))), axis=1)
    return mul(mean(picked), -1.0)


def segmentation_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Soft dice + cross entropy."""
    return add(soft_dice_loss(logits, labels), cross_entropy_loss(logits, labels))


@dataclass(frozen=True)
class DeepSupervisionConfig:
    """Weights for the full, 1/4 and 1/8 resolution terms.

    Each coarser term gets half the weight of the previous one, and the three
    are normalised to sum to one: (4/7, 2/7, 1/7).
    """

    alphas: tuple = (4 / 7, 2 / 7, 1 / 7)
    enabled: bool = True

    @classmethod
    def halving(cls, levels: int = 3, enabled: bool = True) -> "DeepSupervisionConfig":
        raw = [0.5**i for i in range(levels)]
        total = float(np.sum(raw))
        return cls(tuple(r / total for r in raw), enabled)


def downsample_labels(labels: np.ndarray, shape) -> np.ndarray:
    """Nearest-neighbour subsampling of ``[B, H, W, D]`` labels to ``shape`` (taking every f-th voxel)."""
    labels = np.asarray(labels)
    factors = []
    for n, m in zip(labels.shape[1:], shape):
        if n % m:
            raise ShapeError(f"cannot downsample label extent {n} to {m}")
        factors.append(n // m)
    return labels[(slice(None),) + tuple(slice(None, None, f) for f in factors)]


def deep_supervision_loss(outputs: dict, labels: np.ndarray, config: DeepSupervisionConfig = DeepSupervisionConfig()) -> Tensor:
    """Weighted sum of :func:`segmentation_loss` at the full and two auxiliary resolutions."""
    labels = np.asarray(labels)
    full = segmentation_loss(outputs["logits"], labels)
    if not config.enabled:
        return full
    aux = outputs["aux"]
    if len(aux) != len(config.alphas) - 1:
        raise ShapeError(f"expected {len(config.alphas) - 1} auxiliary outputs, got {len(aux)}")
    total = mul(full, config.alphas[0])
    for alpha, out in zip(config.alphas[1:], aux):
        total = add(total, mul(segmentation_loss(out, downsample_labels(labels, out.shape[2:])), alpha))
    return total
