"""Poly learning-rate decay and SGD with classical momentum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..engine import ShapeError

POLY_EXPONENT = 0.9


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 0.01
    final_epoch: int = 1000
    exponent: float = POLY_EXPONENT


def poly_lr(schedule: LrSchedule, epoch: float) -> float:
    """``initial_lr * (1 - epoch / final_epoch) ** 0.9``."""
    if not 0 <= epoch <= schedule.final_epoch:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.final_epoch}]")
    return schedule.initial_lr * (1.0 - epoch / schedule.final_epoch) ** schedule.exponent


@dataclass
class OptimizerState:
    momentum: float = 0.99
    weight_decay: float = 3e-5
    buffers: dict = field(default_factory=dict)

    def buffer_for(self, name: str, like: np.ndarray) -> np.ndarray:
        buf = self.buffers.get(name)
        if buf is None:
            buf = self.buffers[name] = np.zeros_like(like)
        return buf


def sgd_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> None:
    """In-place update for every named parameter.

    ``g = grad + wd * p; buf = momentum * buf + g; p -= lr * buf``.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.data.shape}")
        buf = state.buffer_for(name, p.data)
        g = g + state.weight_decay * p.data
        buf *= state.momentum
        buf += g
        p.data = (p.data - lr * buf).astype(p.data.dtype, copy=False)
