"""Losses, schedule, optimiser, synthetic data and the training loop."""

from .data import PlacementError, VolumeSample, ellipsoid_mask, synth_dataset
from .loop import TrainHistory, TrainingDiverged, clip_grad_norm, make_batch, train, train_step
from .losses import (
    DeepSupervisionConfig,
    cross_entropy_loss,
    deep_supervision_loss,
    downsample_labels,
    one_hot,
    segmentation_loss,
    soft_dice_loss,
)
from .optim import LrSchedule, OptimizerState, poly_lr, sgd_step

__all__ = [
    "DeepSupervisionConfig",
    "LrSchedule",
    "OptimizerState",
    "PlacementError",
    "TrainHistory",
    "TrainingDiverged",
    "VolumeSample",
    "clip_grad_norm",
    "cross_entropy_loss",
    "deep_supervision_loss",
    "downsample_labels",
    "ellipsoid_mask",
    "make_batch",
    "one_hot",
    "poly_lr",
    "segmentation_loss",
    "sgd_step",
    "soft_dice_loss",
    "synth_dataset",
    "train",
    "train_step",
]
