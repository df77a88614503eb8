"""Minimal tensor engine: tape autodiff, convolutions, Adam."""
from .conv import conv2d, conv2d_raw, conv_transpose2d, conv_transpose2d_raw, resize_bilinear, weight_norm
from .core import (
    Tensor,
    abs,
    activation,
    add,
    backward,
    clamp_min,
    concat,
    concat_channels,
    cross_entropy,
    elementwise,
    linear,
    log,
    max,
    mean,
    mul,
    neg,
    prelu,
    reduce,
    reshape,
    scale,
    sigmoid,
    softmax,
    square,
    stack,
    sub,
    sum,
    take,
    tanh,
    tensor_create,
)
from .gradcheck import grad_check
from .optim import Adam, AdamHyper, AdamState, adam_step

__all__ = [
    "Tensor", "tensor_create", "backward", "elementwise", "reduce", "add", "sub", "mul", "neg", "scale",
    "abs", "log", "square", "clamp_min", "tanh", "sigmoid", "activation", "prelu", "sum", "mean", "max",
    "reshape", "take", "concat", "stack", "concat_channels", "linear", "softmax", "cross_entropy",
    "conv2d", "conv2d_raw", "conv_transpose2d", "conv_transpose2d_raw", "weight_norm", "resize_bilinear",
    "grad_check", "Adam", "AdamHyper", "AdamState", "adam_step",
]
