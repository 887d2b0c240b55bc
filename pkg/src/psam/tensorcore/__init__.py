"""Minimal dense tensors with reverse-mode differentiation."""

from . import ops, weights_io
from .gradcheck import SKIPPED, finite_diff_check, relative_error
from .ops import (
    add,
    avg_pool2d,
    concat,
    conv2d,
    cross_entropy,
    expand,
    gelu,
    global_avg_pool,
    layer_norm,
    linear,
    matmul,
    mean_all,
    mul,
    multi_head_attention,
    narrow,
    pad_channels,
    relu,
    reshape,
    scale,
    scale_channels,
    sigmoid,
    softmax,
    sum_all,
    transpose,
)
from .params import SGD, ParamRegistry, UnknownParameter
from .tensor import ComputationRecord, NotScalarLoss, ShapeMismatch, Tensor, backward

__all__ = [
    "SGD",
    "SKIPPED",
    "ComputationRecord",
    "NotScalarLoss",
    "ParamRegistry",
    "ShapeMismatch",
    "Tensor",
    "UnknownParameter",
    "add",
    "avg_pool2d",
    "backward",
    "concat",
    "conv2d",
    "cross_entropy",
    "expand",
    "finite_diff_check",
    "gelu",
    "global_avg_pool",
    "layer_norm",
    "linear",
    "matmul",
    "mean_all",
    "mul",
    "multi_head_attention",
    "narrow",
    "ops",
    "pad_channels",
    "relative_error",
    "relu",
    "reshape",
    "scale",
    "scale_channels",
    "sigmoid",
    "softmax",
    "sum_all",
    "transpose",
    "weights_io",
]
