"""Training loop: forward, deep-supervision loss, backward, SGD."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..engine import Tensor, backward
from ..model import Model, forward
from .losses import DeepSupervisionConfig, deep_supervision_loss
from .optim import LrSchedule, OptimizerState, poly_lr, sgd_step

logger = logging.getLogger(__name__)

DEFAULT_ITERS_PER_EPOCH = 250
DEFAULT_BATCH_SIZE = 2
DEFAULT_GRAD_CLIP = 12.0


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, iteration: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, iteration {iteration}")
        self.epoch = epoch
        self.iteration = iteration


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, epoch: int, mean_loss: float, lr: float) -> None:
        self.records.append({"epoch": epoch, "mean_loss": mean_loss, "lr": lr})

    @property
    def losses(self) -> list:
        return [r["mean_loss"] for r in self.records]

    @property
    def lrs(self) -> list:
        return [r["lr"] for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "TrainHistory":
        with open(path) as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


def make_batch(dataset, indices) -> tuple:
    x = np.stack([dataset[i].image for i in indices]).astype(np.float32)
    y = np.stack([dataset[i].labels for i in indices])
    return Tensor(x), y


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most ``max_norm``; returns the original norm."""
    total = float(np.sqrt(sum(np.sum(g.astype(np.float64) ** 2) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def train_step(
    model: Model,
    x: Tensor,
    y: np.ndarray,
    ds_config: DeepSupervisionConfig,
    state: OptimizerState,
    lr: float,
    grad_clip: Optional[float] = DEFAULT_GRAD_CLIP,
) -> float:
    model.zero_grad()
    loss = deep_supervision_loss(forward(model, x), y, ds_config)
    value = loss.item()
    if not np.isfinite(value):
        return value
    backward(loss, model.parameters())
    grads = {k: p.grad for k, p in model.params.items()}
    if grad_clip is not None:
        clip_grad_norm(grads, grad_clip)
    sgd_step(model.params, grads, state, lr)
    return value


def train(
    model: Model,
    dataset: list,
    schedule: LrSchedule,
    ds_config: DeepSupervisionConfig,
    epochs: int,
    iters_per_epoch: int = DEFAULT_ITERS_PER_EPOCH,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    optimizer: Optional[OptimizerState] = None,
    start_epoch: int = 0,
    on_epoch: Optional[Callable[[int, dict], None]] = None,
    grad_clip: Optional[float] = DEFAULT_GRAD_CLIP,
) -> TrainHistory:
    """Run ``epochs`` epochs of ``iters_per_epoch`` SGD steps; lr follows the poly schedule per epoch.

    Batches are drawn with replacement from ``dataset`` using ``seed``. Pass an
    ``OptimizerState`` to keep the momentum buffers after the call. Gradients
    are clipped to a global norm of ``grad_clip`` (None disables clipping).
    """
    if not dataset:
        raise ValueError("empty dataset")
    dims = model.config.training_volume_dims
    for i, s in enumerate(dataset):
        if tuple(s.labels.shape) != dims:
            raise ValueError(f"sample {i} has dims {s.labels.shape}, model expects {dims}")
    if epochs > schedule.final_epoch:
        raise ValueError(f"{epochs} epochs exceed the schedule's final epoch {schedule.final_epoch}")
    state = optimizer if optimizer is not None else OptimizerState()
    rng = np.random.default_rng(seed)
    history = TrainHistory()
    for epoch in range(start_epoch, epochs):
        lr = poly_lr(schedule, epoch)
        losses = []
        for it in range(iters_per_epoch):
            x, y = make_batch(dataset, rng.integers(len(dataset), size=batch_size))
            try:
                value = train_step(model, x, y, ds_config, state, lr, grad_clip)
            except FloatingPointError:
                value = float("nan")
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, it, value)
            losses.append(value)
        history.append(epoch, float(np.mean(losses)), lr)
        logger.info("epoch %d loss %.5f lr %.6g", epoch, history.losses[-1], lr)
        if on_epoch is not None:
            on_epoch(epoch, history.records[-1])
    return history
