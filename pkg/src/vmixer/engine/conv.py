"""3D convolution and transposed convolution on ``[B, C, H, W, D]`` tensors.

Both are expressed through the same gather (im2col) / scatter (col2im) pair,
so each op's backward pass is built from the other's forward.
"""

from __future__ import annotations

import itertools

import numpy as np

from .tensor import ShapeError, Tensor, make_result


def _triple(v) -> tuple:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ValueError(f"expected an int or a 3-tuple, got {v}")
    return v


def _gather(xp: np.ndarray, kernel, stride, out_dims) -> np.ndarray:
    """im2col: ``[B, C, *padded]`` -> ``[B, C*k, P]`` with kernel offsets inner to channels."""
    B, C = xp.shape[:2]
    cols = np.empty((B, C) + tuple(kernel) + tuple(out_dims), dtype=xp.dtype)
    for i, j, l in itertools.product(*(range(k) for k in kernel)):
        cols[:, :, i, j, l] = xp[
            :,
            :,
            i : i + stride[0] * out_dims[0] : stride[0],
            j : j + stride[1] * out_dims[1] : stride[1],
            l : l + stride[2] * out_dims[2] : stride[2],
        ]
    return cols.reshape(B, C * int(np.prod(kernel)), int(np.prod(out_dims)))


def _scatter(cols: np.ndarray, C: int, padded_dims, kernel, stride, out_dims) -> np.ndarray:
    """col2im: adjoint of :func:`_gather`, summing overlapping contributions."""
    B = cols.shape[0]
    cols = cols.reshape((B, C) + tuple(kernel) + tuple(out_dims))
    xp = np.zeros((B, C) + tuple(padded_dims), dtype=cols.dtype)
    for i, j, l in itertools.product(*(range(k) for k in kernel)):
        xp[
            :,
            :,
            i : i + stride[0] * out_dims[0] : stride[0],
            j : j + stride[1] * out_dims[1] : stride[1],
            l : l + stride[2] * out_dims[2] : stride[2],
        ] += cols[:, :, i, j, l]
    return xp


def _pad(x: np.ndarray, padding) -> np.ndarray:
    if not any(padding):
        return x
    return np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))


def _crop(xp: np.ndarray, padding) -> np.ndarray:
    if not any(padding):
        return xp
    sl = tuple(slice(p, xp.shape[2 + a] - p) for a, p in enumerate(padding))
    return xp[(slice(None), slice(None)) + sl]


def conv_output_dims(in_dims, kernel, stride=1, padding=0) -> tuple:
    kernel, stride, padding = _triple(kernel), _triple(stride), _triple(padding)
    return tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(in_dims, kernel, stride, padding))


def conv3d(x: Tensor, kernel: Tensor, stride=1, padding=0, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation with a ``[C_out, C_in, kh, kw, kd]`` kernel."""
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or kernel.ndim != 5:
        raise ShapeError(f"conv3d expects 5-D input and kernel, got {x.shape} and {kernel.shape}")
    B, Ci = x.shape[:2]
    Co, Ck = kernel.shape[:2]
    if Ci != Ck:
        raise ShapeError(f"conv3d channel mismatch: input has {Ci}, kernel expects {Ck}")
    ks = kernel.shape[2:]
    padded = tuple(n + 2 * p for n, p in zip(x.shape[2:], padding))
    out_dims = tuple((n - k) // s + 1 for n, k, s in zip(padded, ks, stride))
    if any(n < k for n, k in zip(padded, ks)) or min(out_dims) <= 0:
        raise ShapeError(
            f"conv3d output extent would be non-positive: input {x.shape[2:]}, kernel {ks}, padding {padding}"
        )

    cols = _gather(_pad(x.data, padding), ks, stride, out_dims)
    W = kernel.data.reshape(Co, -1)
    out = np.matmul(W.astype(np.float64), cols).astype(x.dtype)
    if bias is not None:
        out += bias.data[:, None]

    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g = g.reshape(B, Co, -1)
        gx = gk = gb = None
        if x.requires_grad:
            dcols = np.matmul(W.T.astype(np.float64), g).astype(x.dtype)
            gx = _crop(_scatter(dcols, Ci, padded, ks, stride, out_dims), padding)
        if kernel.requires_grad:
            gk = np.matmul(g.astype(np.float64), cols.transpose(0, 2, 1)).sum(axis=0)
            gk = gk.reshape(kernel.shape).astype(kernel.dtype)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2), dtype=np.float64).astype(bias.dtype)
        return (gx, gk) if bias is None else (gx, gk, gb)

    return make_result(out.reshape((B, Co) + out_dims), inputs, bw, "conv3d")


def conv3d_transpose(x: Tensor, kernel: Tensor, stride=1, padding=0, bias: Tensor | None = None) -> Tensor:
    """Transposed convolution with a ``[C_in, C_out, kh, kw, kd]`` kernel.

    Output extent per axis is ``(n - 1) * stride + k - 2 * padding``. For the
    same kernel tensor this is the adjoint of :func:`conv3d`.
    """
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or kernel.ndim != 5:
        raise ShapeError(f"conv3d_transpose expects 5-D input and kernel, got {x.shape} and {kernel.shape}")
    B, Ci = x.shape[:2]
    Ck, Co = kernel.shape[:2]
    if Ci != Ck:
        raise ShapeError(f"conv3d_transpose channel mismatch: input has {Ci}, kernel expects {Ck}")
    ks = kernel.shape[2:]
    in_dims = x.shape[2:]
    padded = tuple((n - 1) * s + k for n, k, s in zip(in_dims, ks, stride))
    out_dims = tuple(n - 2 * p for n, p in zip(padded, padding))
    if min(out_dims) <= 0:
        raise ShapeError(f"conv3d_transpose output extent would be non-positive: {out_dims}")

    W = kernel.data.reshape(Ci, -1)
    xf = x.data.reshape(B, Ci, -1)
    cols = np.matmul(W.T.astype(np.float64), xf).astype(x.dtype)
    out = _crop(_scatter(cols, Co, padded, ks, stride, in_dims), padding)
    if bias is not None:
        out = out + bias.data.reshape(1, Co, 1, 1, 1)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gcols = _gather(_pad(g, padding), ks, stride, in_dims)
        gx = gk = gb = None
        if x.requires_grad:
            gx = np.matmul(W.astype(np.float64), gcols).astype(x.dtype).reshape(x.shape)
        if kernel.requires_grad:
            gk = np.matmul(xf.astype(np.float64), gcols.transpose(0, 2, 1)).sum(axis=0)
            gk = gk.reshape(kernel.shape).astype(kernel.dtype)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4), dtype=np.float64).astype(bias.dtype)
        return (gx, gk) if bias is None else (gx, gk, gb)

    return make_result(np.ascontiguousarray(out), inputs, bw, "conv3d_transpose")
