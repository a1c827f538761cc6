"""Minimal reverse-mode autodiff with the ops the link models need."""

from .graph import (
    DiffValue,
    as_value,
    add,
    sub,
    mul,
    div,
    power,
    exp,
    log,
    sqrt,
    sigmoid,
    relu,
    leaky_relu,
    clip_straight_through,
    matmul,
    reduce_sum,
    reduce_mean,
    reshape,
    transpose,
    getitem,
    concat,
    stack,
    pad_last,
    softmax,
    softmax_cross_entropy,
    fir_diff,
    depthwise_conv1d,
)
from .optim import Adam, ParamStore
from .volterra import (
    DEFAULT_MEMORY,
    FitReport,
    VolterraKernel,
    fit_least_squares,
    fit_volterra,
    kernel_from_coefficients,
    lag_matrix,
    lag_matrix_diff,
    volterra_apply,
    volterra_apply_diff,
    volterra_design,
)
from .check import gradient_check

__all__ = [
    "DiffValue", "as_value", "add", "sub", "mul", "div", "power", "exp",
    "log", "sqrt", "sigmoid", "relu", "leaky_relu", "clip_straight_through",
    "matmul", "reduce_sum", "reduce_mean", "reshape", "transpose", "getitem",
    "concat", "stack", "pad_last", "softmax", "softmax_cross_entropy",
    "fir_diff", "depthwise_conv1d", "Adam", "ParamStore", "DEFAULT_MEMORY",
    "FitReport", "VolterraKernel", "fit_least_squares", "fit_volterra",
    "kernel_from_coefficients", "lag_matrix", "lag_matrix_diff",
    "volterra_apply", "volterra_apply_diff", "volterra_design",
    "gradient_check",
]
