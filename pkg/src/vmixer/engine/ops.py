"""Differentiable forward ops over :class:`Tensor`.

Every op computes its forward value with numpy and registers a closure that
maps the output gradient back to its inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, Tensor, as_tensor, make_result

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}") from None


def _acc64(x: np.ndarray) -> np.ndarray:
    return x if x.dtype == np.float64 else x.astype(np.float64)


def _like(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return x.astype(ref.dtype, copy=False)


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bw, "div")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(a, b, op_code: str) -> Tensor:
    """Dispatch a binary pointwise op by name (``add``, ``sub``, ``mul``, ``div``)."""
    try:
        fn = _ELEMENTWISE[op_code]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_code!r}") from None
    return fn(a, b)


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)
    return make_result(out, (t,), lambda g: (g * out,), "exp")


def log(t: Tensor) -> Tensor:
    return make_result(np.log(t.data), (t,), lambda g: (g / t.data,), "log")


def gelu(t: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written through erf."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = x * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return make_result(_like(out, x), (t,), bw, "gelu")


# --------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, t.ndim)
    out = _acc64(t.data).sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, t.shape).astype(t.dtype),)

    return make_result(_like(np.asarray(out), t.data), (t,), bw, "sum")


def mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, t.ndim)
    n = int(np.prod([t.shape[a] for a in axes])) if axes else 1
    return mul(sum(t, axis=axes, keepdims=keepdims), 1.0 / n)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, n]``.

    ``b`` may also be a plain 2-D matrix shared across the batch. Products
    are accumulated in float64.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimension mismatch: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimension mismatch: {a.shape} @ {b.shape}")
    A, B = _acc64(a.data), _acc64(b.data)
    out = np.matmul(A, B)

    def bw(g):
        G = _acc64(g)
        ga = gb = None
        if a.requires_grad:
            ga = _like(np.matmul(G, np.swapaxes(B, -1, -2)), a.data)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(A, -1, -2), G)
            if b.ndim == 2 and gb.ndim > 2:
                gb = gb.reshape(-1, *b.shape).sum(axis=0)
            gb = _like(gb, b.data)
        return ga, gb

    return make_result(_like(out, a.data), (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), weight)
    if bias is not None:
        y = add(y, bias)
    return reshape(y, lead + (weight.shape[-1],))


# --------------------------------------------------------------------------
# layout


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = t.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {shape}") from None
    return make_result(out, (t,), lambda g: (g.reshape(t.shape),), "reshape")


def permute(t: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeError(f"invalid permutation {axes} for a {t.ndim}-D tensor")
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(t.data, axes), (t,), lambda g: (np.transpose(g, inv),), "permute")


def permute_reshape(t: Tensor, permutation, new_shape) -> Tensor:
    """Permute axes, then reshape; the two layout moves used for token mixing."""
    return reshape(permute(t, permutation), new_shape)


def transpose(t: Tensor, a: int = -2, b: int = -1) -> Tensor:
    axes = list(range(t.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return permute(t, axes)


def roll(t: Tensor, shifts, axes) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return make_result(np.roll(t.data, shifts, axes), (t,), lambda g: (np.roll(g, back, axes),), "roll")


def getitem(t: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing."""

    def bw(g):
        full = np.zeros_like(t.data)
        full[idx] = g
        return (full,)

    return make_result(t.data[idx], (t,), bw, "getitem")


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``table`` with an integer index array (repeats allowed)."""
    index = np.asarray(index)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return make_result(table.data[index], (table,), bw, "take")


# --------------------------------------------------------------------------
# normalisation


def _check_finite(x: np.ndarray, op: str) -> None:
    if np.isnan(x).any():
        raise FloatingPointError(f"{op}: NaN in input")


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    x = t.data
    _check_finite(x, "softmax")
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        s = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - s),)

    return make_result(out, (t,), bw, "softmax")


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    x = t.data
    _check_finite(x, "log_softmax")
    z = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (t,), bw, "log_softmax")


def layer_norm(t: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise each slice along ``axis`` to zero mean / unit variance, then scale and shift."""
    axis = axis % t.ndim
    n = t.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match axis extent {n}")
    bshape = [1] * t.ndim
    bshape[axis] = n
    gam = gamma.data.reshape(bshape)
    bet = beta.data.reshape(bshape)

    x = _acc64(t.data)
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gam + bet

    red = tuple(i for i in range(t.ndim) if i != axis)

    def bw(g):
        G = _acc64(g)
        gx = gg = gb = None
        if t.requires_grad:
            dxh = G * gam
            m1 = dxh.mean(axis=axis, keepdims=True)
            m2 = (dxh * xhat).mean(axis=axis, keepdims=True)
            gx = _like(rstd * (dxh - m1 - xhat * m2), t.data)
        if gamma.requires_grad:
            gg = _like((G * xhat).sum(axis=red), gamma.data)
        if beta.requires_grad:
            gb = _like(G.sum(axis=red), beta.data)
        return gx, gg, gb

    return make_result(_like(out, t.data), (t, gamma, beta), bw, "layer_norm")
