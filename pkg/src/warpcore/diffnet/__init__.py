"""Minimal reverse-mode autodiff on float64 numpy arrays."""

from .tensor import Tensor, backward, constant, parameter
from .ops import (
    add,
    concat,
    conv2d,
    depth_to_space,
    fc,
    kernel_warp,
    leaky_relu,
    mul,
    pconv2d,
    pconv_residual_block,
    relu,
    reshape,
    residual_block,
    scale,
    slice_ch,
    space_to_depth,
    square_sum,
    abs_sum,
    tensor_sum,
)
from .store import ParamStore, load_weights, save_weights
from .optim import AdamState, adam_step
from .check import grad_check

__all__ = [
    "Tensor",
    "backward",
    "constant",
    "parameter",
    "add",
    "concat",
    "conv2d",
    "depth_to_space",
    "fc",
    "kernel_warp",
    "leaky_relu",
    "mul",
    "pconv2d",
    "pconv_residual_block",
    "relu",
    "reshape",
    "residual_block",
    "scale",
    "slice_ch",
    "space_to_depth",
    "square_sum",
    "abs_sum",
    "tensor_sum",
    "ParamStore",
    "save_weights",
    "load_weights",
    "AdamState",
    "adam_step",
    "grad_check",
]
