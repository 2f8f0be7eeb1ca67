"""Minimal dense-tensor engine with tape-based reverse-mode differentiation."""

from .conv import conv3d, conv3d_transpose, conv_output_dims
from .gradcheck import finite_diff_gradcheck, relative_error
from .ops import (
    add,
    div,
    elementwise,
    exp,
    gelu,
    getitem,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    permute,
    permute_reshape,
    reshape,
    roll,
    softmax,
    sub,
    sum,
    take,
    transpose,
)
from .tensor import (
    Node,
    ShapeError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    get_default_dtype,
    get_tape,
    is_grad_enabled,
    make_result,
    no_grad,
)

__all__ = [
    "Node",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "conv3d",
    "conv3d_transpose",
    "conv_output_dims",
    "default_dtype",
    "div",
    "elementwise",
    "exp",
    "finite_diff_gradcheck",
    "gelu",
    "get_default_dtype",
    "get_tape",
    "getitem",
    "is_grad_enabled",
    "layer_norm",
    "linear",
    "log",
    "log_softmax",
    "make_result",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "permute",
    "permute_reshape",
    "relative_error",
    "reshape",
    "roll",
    "softmax",
    "sub",
    "sum",
    "take",
    "transpose",
]
