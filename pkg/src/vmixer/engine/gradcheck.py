"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward, default_dtype, no_grad


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def finite_diff_gradcheck(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
    max_coords: Optional[int] = None,
    seed: int = 0,
    float64: bool = True,
) -> float:
    """Compare backprop gradients of ``f()`` against central differences.

    ``f`` takes no arguments and must rebuild its graph from ``params`` on each
    call. Up to ``max_coords`` coordinates per parameter are sampled (all when
    None). Returns the maximum of ``|a - n| / max(|a|, |n|, 1e-8)``.

    With ``float64`` set (the default) parameters are promoted for the duration
    of the check and restored afterwards. Constant inputs captured by ``f``
    are not promoted; build them as float64 (or inside ``f``) or their float32
    rounding will dominate the finite differences.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    saved = [p.data for p in params]
    saved_grads = [p.grad for p in params]
    dtype = np.float64 if float64 else params[0].dtype
    rng = np.random.default_rng(seed)
    try:
        with default_dtype(dtype):
            for p in params:
                p.data = p.data.astype(dtype)
                p.grad = None
            loss = f()
            backward(loss, params)
            analytic = [p.grad.astype(np.float64) for p in params]

            worst = 0.0
            with no_grad():
                for p, ga in zip(params, analytic):
                    flat = p.data.reshape(-1)
                    n = flat.size
                    idx = np.arange(n) if max_coords is None or max_coords >= n else rng.choice(n, max_coords, replace=False)
                    for i in idx:
                        orig = flat[i]
                        flat[i] = orig + eps
                        fp = float(np.sum(f().data, dtype=np.float64))
                        flat[i] = orig - eps
                        fm = float(np.sum(f().data, dtype=np.float64))
                        flat[i] = orig
                        numeric = (fp - fm) / (2.0 * eps)
                        worst = max(worst, relative_error(float(ga.reshape(-1)[i]), numeric))
    finally:
        for p, d, g in zip(params, saved, saved_grads):
            p.data = d
            p.grad = g
    return worst
