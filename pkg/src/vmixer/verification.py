"""Finite-difference gradient suite over every differentiable op, the blocks and a micro model.

Each case draws its inputs from a seeded generator and contracts the op's
output with a fixed random tensor, so the checked scalar depends on every
output element with a non-trivial gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine as E
from .blocks import WindowSpec, build_shift_mask, gvm_block_forward, init_gvm_block, init_lvsa_block, lvsa_block_forward
from .blocks.lvsa import init_attention_layer, relative_position_index, window_attention
from .engine import Tensor, finite_diff_gradcheck
from .model import ModelConfig, build_model, forward
from .training import DeepSupervisionConfig, deep_supervision_loss

OP_TOL = 1e-4
CONV_TOL = 1e-3
MIN_SEEDS = 20
# float64 evaluation leaves room for a smaller step; the deep graph's curvature
# makes the O(eps^2) term visible at the default step on small-gradient coordinates
MODEL_EPS = 1e-4


@dataclass
class CaseResult:
    name: str
    tolerance: float
    seeds: int
    worst: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def _leaf(rng, *shape, scale=1.0, offset=0.0) -> Tensor:
    return Tensor(rng.normal(offset, scale, size=shape), requires_grad=True)


def _project(out: Tensor, proj: np.ndarray) -> Tensor:
    return E.sum(E.mul(out, Tensor(proj)))


def _contracted(rng, op: Callable, params: list):
    """Wrap ``op(*params)`` into a scalar via a random contraction fixed at build time."""
    with E.no_grad():
        shape = op(*params).shape
    proj = rng.normal(size=shape)
    return (lambda: _project(op(*params), proj)), params


def _binary(fn, b_shape=(3, 1)):
    def build(rng):
        a = _leaf(rng, 2, 3, 4)
        b = _leaf(rng, *b_shape, offset=2.0 if fn is E.div else 0.0, scale=0.3 if fn is E.div else 1.0)
        return _contracted(rng, fn, [a, b])

    return build


def _unary(fn, positive=False):
    def build(rng):
        x = Tensor(rng.uniform(0.5, 2.0, size=(3, 5)) if positive else rng.normal(size=(3, 5)), requires_grad=True)
        return _contracted(rng, fn, [x])

    return build


def _case_sum(rng):
    x = _leaf(rng, 3, 4, 5)
    return _contracted(rng, lambda t: E.sum(t, axis=(0, 2), keepdims=True), [x])


def _case_mean(rng):
    x = _leaf(rng, 3, 4, 5)
    return _contracted(rng, lambda t: E.mean(t, axis=1), [x])


def _case_matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 5)
    return _contracted(rng, E.matmul, [a, b])


def _case_linear(rng):
    x, w, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 6), _leaf(rng, 6)
    return _contracted(rng, E.linear, [x, w, b])


def _case_reshape(rng):
    return _contracted(rng, lambda t: E.reshape(t, (6, 4)), [_leaf(rng, 2, 3, 4)])


def _case_permute(rng):
    return _contracted(rng, lambda t: E.permute(t, (2, 0, 1)), [_leaf(rng, 2, 3, 4)])


def _case_roll(rng):
    return _contracted(rng, lambda t: E.roll(t, (1, -2), (0, 2)), [_leaf(rng, 3, 3, 4)])


def _case_getitem(rng):
    return _contracted(rng, lambda t: E.getitem(t, (slice(1, 3), 0, slice(None, None, 2))), [_leaf(rng, 3, 3, 4)])


def _case_take(rng):
    index = rng.integers(0, 5, size=12)
    return _contracted(rng, lambda t: E.take(t, index), [_leaf(rng, 5, 2)])


def _case_softmax(rng):
    return _contracted(rng, lambda t: E.softmax(t, axis=-1), [_leaf(rng, 3, 6)])


def _case_log_softmax(rng):
    return _contracted(rng, lambda t: E.log_softmax(t, axis=1), [_leaf(rng, 2, 4, 3)])


def _case_layer_norm(rng):
    # normalisation is scale-free, so a wider input spread shrinks the O(eps^2) truncation term
    x, g, b = _leaf(rng, 4, 6, scale=3.0), _leaf(rng, 6, offset=1.0), _leaf(rng, 6)
    return _contracted(rng, lambda t, gg, bb: E.layer_norm(t, gg, bb, axis=-1), [x, g, b])


def _case_layer_norm_channels(rng):
    x, g, b = _leaf(rng, 2, 8, 3, scale=3.0), _leaf(rng, 8, offset=1.0), _leaf(rng, 8)
    return _contracted(rng, lambda t, gg, bb: E.layer_norm(t, gg, bb, axis=1), [x, g, b])


def _case_gelu(rng):
    # jittered around fixed points; gelu' vanishes near x = -0.75, where relative error is meaningless
    base = np.array([-2.0, -0.5, 0.3, 4.0])
    x = Tensor(np.tile(base, (3, 1)) + rng.uniform(-0.1, 0.1, size=(3, 4)), requires_grad=True)
    return _contracted(rng, E.gelu, [x])


def _case_conv(rng):
    x, k, b = _leaf(rng, 1, 2, 5, 5, 4), _leaf(rng, 3, 2, 3, 3, 3, scale=0.3), _leaf(rng, 3)
    return _contracted(rng, lambda xx, kk, bb: E.conv3d(xx, kk, stride=(2, 2, 1), padding=1, bias=bb), [x, k, b])


def _case_conv_transpose(rng):
    x, k, b = _leaf(rng, 1, 3, 2, 3, 2), _leaf(rng, 3, 2, 2, 2, 2, scale=0.3), _leaf(rng, 2)
    return _contracted(rng, lambda xx, kk, bb: E.conv3d_transpose(xx, kk, stride=2, bias=bb), [x, k, b])


def _case_attention(rng):
    window = (2, 2, 2)
    spec = WindowSpec(window, (1, 1, 1))
    mask = build_shift_mask((4, 2, 2), spec)
    p = {k: Tensor(v.data.astype(np.float64) + rng.normal(0, 0.2, size=v.shape), requires_grad=True)
         for k, v in init_attention_layer(rng, 4, 2, window).items() if not k.startswith(("norm", "fc"))}
    x = _leaf(rng, 2 * mask.shape[0], 8, 4)
    index = relative_position_index(window)
    names = sorted(p)
    return _contracted(rng, lambda xx, *vals: window_attention(xx, dict(zip(names, vals)), 2, mask, index), [x] + [p[k] for k in names])


def _case_lvsa_block(rng):
    spec = WindowSpec.half_shift((2, 2, 2))
    params = init_lvsa_block(rng, 4, 2, spec)
    names = sorted(params)
    leaves = [Tensor(params[k].data + rng.normal(0, 0.1, size=params[k].shape), requires_grad=True) for k in names]
    x = _leaf(rng, 1, 4, 4, 4, 2)
    return _contracted(rng, lambda xx, *vals: lvsa_block_forward(xx, dict(zip(names, vals)), spec, 2), [x] + leaves)


def _case_gvm_block(rng):
    params = init_gvm_block(rng, 4, 8)
    names = sorted(params)
    leaves = [Tensor(params[k].data + rng.normal(0, 0.1, size=params[k].shape), requires_grad=True) for k in names]
    x = _leaf(rng, 2, 4, 2, 2, 2)
    return _contracted(rng, lambda xx, *vals: gvm_block_forward(xx, dict(zip(names, vals))), [x] + leaves)


# (name, builder, tolerance, coordinates sampled per parameter or None for all)
OP_CASES = [
    ("add", _binary(E.add), OP_TOL, None),
    ("sub", _binary(E.sub), OP_TOL, None),
    ("mul", _binary(E.mul), OP_TOL, None),
    ("div", _binary(E.div), OP_TOL, None),
    ("exp", _unary(E.exp), OP_TOL, None),
    ("log", _unary(E.log, positive=True), OP_TOL, None),
    ("gelu", _case_gelu, OP_TOL, None),
    ("sum", _case_sum, OP_TOL, None),
    ("mean", _case_mean, OP_TOL, None),
    ("matmul", _case_matmul, OP_TOL, None),
    ("linear", _case_linear, OP_TOL, None),
    ("reshape", _case_reshape, OP_TOL, None),
    ("permute", _case_permute, OP_TOL, None),
    ("roll", _case_roll, OP_TOL, None),
    ("getitem", _case_getitem, OP_TOL, None),
    ("take", _case_take, OP_TOL, None),
    ("softmax", _case_softmax, OP_TOL, None),
    ("log_softmax", _case_log_softmax, OP_TOL, None),
    ("layer_norm", _case_layer_norm, OP_TOL, None),
    ("layer_norm_axis1", _case_layer_norm_channels, OP_TOL, None),
    ("window_attention", _case_attention, OP_TOL, 6),
    ("conv3d", _case_conv, CONV_TOL, 12),
    ("conv3d_transpose", _case_conv_transpose, CONV_TOL, 12),
    ("lvsa_block", _case_lvsa_block, CONV_TOL, 3),
    ("gvm_block", _case_gvm_block, CONV_TOL, 3),
]

MICRO_CONFIG = dict(base_channels=4, num_classes=3, training_volume_dims=(32, 32, 16))


def _case_micro_model(rng, seed: int):
    kinds = ["LVSA", "GVM", "GVM", "GVM"] if seed % 2 == 0 else ["LVSA"] * 4
    model = build_model(ModelConfig.from_kinds(kinds, seed=seed, **MICRO_CONFIG))
    x = rng.normal(size=(1, 1, 32, 32, 16))
    y = rng.integers(0, 3, size=(1, 32, 32, 16))
    names = list(model.params)
    chosen = [model.params[names[i]] for i in sorted(rng.choice(len(names), size=12, replace=False))]

    def f():
        return deep_supervision_loss(forward(model, Tensor(x)), y, DeepSupervisionConfig())

    return f, chosen


def run_case(name: str, builder, tolerance: float, max_coords, seeds: int = MIN_SEEDS) -> CaseResult:
    start = time.perf_counter()
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        with E.default_dtype(np.float64):
            f, params = builder(rng)
        worst = max(worst, finite_diff_gradcheck(f, params, max_coords=max_coords, seed=seed))
    return CaseResult(name, tolerance, seeds, worst, time.perf_counter() - start)


def run_micro_model(seeds: int = MIN_SEEDS, max_coords: int = 2, eps: float = MODEL_EPS) -> CaseResult:
    start = time.perf_counter()
    worst = 0.0
    for seed in range(seeds):
        f, params = _case_micro_model(np.random.default_rng(seed), seed)
        worst = max(worst, finite_diff_gradcheck(f, params, eps=eps, max_coords=max_coords, seed=seed))
    return CaseResult("micro_model", CONV_TOL, seeds, worst, time.perf_counter() - start)


def run_gradcheck_suite(seeds: int = MIN_SEEDS, include_model: bool = True, model_seeds: int | None = None) -> list:
    results = [run_case(name, b, tol, mc, seeds) for name, b, tol, mc in OP_CASES]
    if include_model:
        results.append(run_micro_model(model_seeds if model_seeds is not None else seeds))
    return results


def format_results(results: list) -> str:
    lines = [f"{'case':<18} {'seeds':>5} {'worst rel err':>14} {'tol':>8} {'time s':>7}  status"]
    for r in results:
        lines.append(
            f"{r.name:<18} {r.seeds:>5} {r.worst:>14.3e} {r.tolerance:>8.0e} {r.seconds:>7.2f}  {'ok' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines) + "\n"
