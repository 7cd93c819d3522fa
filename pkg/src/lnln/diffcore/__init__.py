"""Reverse-mode autodiff over numpy with an explicit tape.

Public surface: ``Tensor``, ``Tape``, the primitive ops, ``grad_check``,
and the kernel lane info (``kernels.BACKEND``).
"""

from . import kernels
from .gradcheck import grad_check
from .ops import (
    LAYER_NORM_EPS,
    add,
    broadcast_to,
    concat,
    exp,
    gradient_reverse,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_along,
    softmax,
    square,
    stop_gradient,
    sub,
    sum_,
    transpose,
)
from .tensor import (
    DiffcoreError,
    NumericError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    active_tape,
    finite_checks_enabled,
    get_default_dtype,
    set_check_finite,
    set_default_dtype,
)

__all__ = [
    "Tensor", "Tape", "active_tape", "grad_check", "kernels",
    "DiffcoreError", "ShapeError", "NumericError", "TapeError",
    "set_default_dtype", "get_default_dtype", "set_check_finite",
    "finite_checks_enabled", "LAYER_NORM_EPS",
    "matmul", "add", "sub", "mul", "neg", "concat", "slice_along",
    "mean", "sum_", "transpose", "reshape", "broadcast_to", "softmax",
    "layer_norm", "relu", "sigmoid", "scale", "square", "log", "exp",
    "gradient_reverse", "stop_gradient",
]
