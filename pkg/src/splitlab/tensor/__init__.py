"""Minimal float64 tensors with reverse-mode automatic differentiation."""

from .core import (
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    enable_grad,
    grad,
    grad_enabled,
    no_grad,
)
from .conv import conv2d, transposed_conv2d
from .ops import (
    ACTIVATIONS,
    activation,
    add,
    broadcast_to,
    div,
    exp,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    mse,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_cross_entropy,
    softplus,
    sqrt,
    sub,
    sum,
    sum_squares,
    tanh,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
