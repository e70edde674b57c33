"""Minimal float64 tensor library with reverse-mode differentiation."""

from .functional import (
    bce_with_logits,
    bilinear_gather,
    bilinear_sample,
    conv2d,
    layer_norm,
    linear,
    pad2d,
    softmax,
)
from .tensor import (
    DimensionError,
    GradientError,
    NumericError,
    Tensor,
    add,
    amax,
    amin,
    concat,
    div,
    exp,
    gelu,
    get_default_dtype,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    max_elementwise,
    maximum,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    sqrt,
    stack,
    sub,
    sum_,
    tanh,
    transpose,
    variance,
)

__all__ = [
    name for name in dir() if not name.startswith("_") and name not in ("functional", "tensor")
]
