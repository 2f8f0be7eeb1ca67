"""Stage-assignment comparison on a synthetic dataset.

Trains one micro model per (stage assignment, seed), then scores it on a
held-out synthetic set with the per-class HD95 averaged over foreground
classes. A class the model never predicts gets the volume diagonal as its
HD95, the largest distance the grid allows, so a collapse is penalised rather
than skipped.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .inference import predict_labels, sliding_window_predict
from .metrics import evaluate
from .model import ModelConfig, build_model
from .training.data import synth_dataset
from .training.loop import train
from .training.losses import DeepSupervisionConfig
from .training.optim import LrSchedule, OptimizerState

logger = logging.getLogger(__name__)

HYBRID = ("LVSA", "GVM", "GVM", "GVM")
UNIFORM_LVSA = ("LVSA", "LVSA", "LVSA", "LVSA")


@dataclass(frozen=True)
class AblationSetup:
    dims: tuple = (32, 32, 16)
    num_classes: int = 3
    base_channels: int = 8
    train_count: int = 20
    test_count: int = 20
    radius_range: tuple = (0.15, 0.3)
    train_data_seed: int = 100
    test_data_seed: int = 200
    epochs: int = 60
    iters_per_epoch: int = 10
    batch_size: int = 1
    initial_lr: float = 0.05
    momentum: float = 0.95
    final_epoch: int = 1000


@dataclass
class RunResult:
    kinds: tuple
    seed: int
    mean_hd95: float
    mean_dsc: float
    final_loss: float
    seconds: float


@dataclass
class AblationResult:
    runs: list = field(default_factory=list)

    def seed_mean(self, kinds) -> float:
        vals = [r.mean_hd95 for r in self.runs if r.kinds == tuple(kinds)]
        return float(np.mean(vals))

    def table(self) -> str:
        lines = [f"{'stages':<24}{'seed':>5}{'HD95':>9}{'DSC':>8}{'loss':>8}{'sec':>7}"]
        for r in self.runs:
            lines.append(
                f"{','.join(r.kinds):<24}{r.seed:>5}{r.mean_hd95:>9.3f}{r.mean_dsc:>8.3f}{r.final_loss:>8.3f}{r.seconds:>7.1f}"
            )
        return "\n".join(lines)


def foreground_hd95(labels: np.ndarray, gt: np.ndarray, num_classes: int) -> tuple:
    """(mean HD95, mean DSC) over foreground classes present in ``gt``."""
    diagonal = float(np.linalg.norm(gt.shape))
    report = evaluate(labels, gt, num_classes)
    rows = [c for c in report.classes if c.label > 0]
    hd = [c.hd95 if c.hd95 is not None else diagonal for c in rows]
    return float(np.mean(hd)), float(np.mean([c.dsc for c in rows]))


def run_one(kinds, seed: int, setup: AblationSetup, train_set=None, test_set=None) -> RunResult:
    if train_set is None:
        train_set = synth_dataset(setup.train_data_seed, setup.train_count, setup.dims, setup.num_classes, setup.radius_range)
    if test_set is None:
        test_set = synth_dataset(setup.test_data_seed, setup.test_count, setup.dims, setup.num_classes, setup.radius_range)
    config = ModelConfig.from_kinds(
        kinds, base_channels=setup.base_channels, num_classes=setup.num_classes, training_volume_dims=setup.dims, seed=seed
    )
    model = build_model(config)
    start = time.perf_counter()
    history = train(
        model,
        train_set,
        LrSchedule(setup.initial_lr, setup.final_epoch),
        DeepSupervisionConfig.halving(),
        setup.epochs,
        setup.iters_per_epoch,
        seed=seed,
        batch_size=setup.batch_size,
        optimizer=OptimizerState(momentum=setup.momentum),
    )
    scores = [
        foreground_hd95(predict_labels(sliding_window_predict(model, s.image)), s.labels, setup.num_classes)
        for s in test_set
    ]
    hd, ds = np.mean(scores, axis=0)
    result = RunResult(tuple(kinds), seed, float(hd), float(ds), history.losses[-1], time.perf_counter() - start)
    logger.info("%s seed %d: HD95 %.3f DSC %.3f", ",".join(kinds), seed, hd, ds)
    return result


def compare_stage_assignments(assignments=(HYBRID, UNIFORM_LVSA), seeds=(0, 1, 2), setup: AblationSetup = AblationSetup()) -> AblationResult:
    """Train and score every assignment under every seed on one fixed train/test split."""
    train_set = synth_dataset(setup.train_data_seed, setup.train_count, setup.dims, setup.num_classes, setup.radius_range)
    test_set = synth_dataset(setup.test_data_seed, setup.test_count, setup.dims, setup.num_classes, setup.radius_range)
    result = AblationResult()
    for kinds in assignments:
        for seed in seeds:
            result.runs.append(run_one(kinds, seed, setup, train_set, test_set))
    return result
