"""Parameter initialisers. All take an explicit ``numpy.random.Generator``."""

from __future__ import annotations

import numpy as np

from ..engine import Tensor


def param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> Tensor:
    """Normal(0, std) truncated at ``bound`` standard deviations (by resampling)."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return param(z * std)


def conv_kernel(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return param(rng.standard_normal(shape) / np.sqrt(fan_in))


def zeros(*shape) -> Tensor:
    return param(np.zeros(shape))


def ones(*shape) -> Tensor:
    return param(np.ones(shape))


def layer_norm_params(prefix: str, n: int) -> dict:
    return {f"{prefix}.gamma": ones(n), f"{prefix}.beta": zeros(n)}


def linear_params(rng: np.random.Generator, prefix: str, n_in: int, n_out: int) -> dict:
    return {f"{prefix}.weight": trunc_normal(rng, (n_in, n_out)), f"{prefix}.bias": zeros(n_out)}


def subset(params: dict, prefix: str) -> dict:
    """Strip ``prefix.`` from the keys that carry it."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def prefixed(prefix: str, params: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in params.items()}
