"""Differentiable operations.

Every vector-Jacobian product is written with tensor operations, so running it
with grad enabled records a second-order graph.
"""

from __future__ import annotations

import numpy as np

from .core import ShapeError, Tensor, as_tensor, make_op

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "linear")


def _const(arr) -> Tensor:
    return Tensor(arr)


def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to ``shape``, undoing numpy broadcasting."""
    if x.shape == tuple(shape):
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1
    )
    out = sum(x, axis=axes, keepdims=True)
    return reshape(out, tuple(shape))


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    return make_op("broadcast_to", np.broadcast_to(x.data, shape).copy(), (x,),
                   lambda g: (sum_to(g, src),))


# -- arithmetic ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op("add", a.data + b.data, (a, b),
                   lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op("sub", a.data - b.data, (a, b),
                   lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op("mul", a.data * b.data, (a, b),
                   lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def vjp(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return make_op("div", out_data, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op("neg", -a.data, (a,), lambda g: (neg(g),))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_op("scale", a.data * c, (a,), lambda g: (scale(g, c),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return make_op("matmul", a.data @ b.data, (a, b),
                   lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op("transpose", np.transpose(a.data, axes).copy(), (a,),
                   lambda g: (transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return make_op("reshape", data, (a,), lambda g: (reshape(g, src),))


# -- reductions ------------------------------------------------------------

def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    src = a.shape
    data = np.sum(a.data, axis=axis, keepdims=keepdims)
    if axis is None:
        axes = tuple(range(a.ndim))
    else:
        axes = tuple(ax % a.ndim for ax in np.atleast_1d(axis))
    kept = tuple(1 if i in axes else n for i, n in enumerate(src))

    def vjp(g):
        return (broadcast_to(reshape(g, kept), src),)

    return make_op("sum", np.asarray(data), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def sum_squares(a) -> Tensor:
    a = as_tensor(a)
    return sum(mul(a, a))


# -- elementwise -----------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    out = None

    def vjp(g):
        return (mul(g, out),)

    out = make_op("exp", out_data, (a,), vjp)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op("log", np.log(a.data), (a,), lambda g: (div(g, a),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (div(scale(g, 0.5), out),)

    out = make_op("sqrt", np.sqrt(a.data), (a,), vjp)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return make_op("relu", a.data * mask, (a,), lambda g: (mul(g, _const(mask)),))


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, float(alpha))
    return make_op("leaky_relu", a.data * slope, (a,), lambda g: (mul(g, _const(slope)),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = make_op("tanh", np.tanh(a.data), (a,), vjp)
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = make_op("sigmoid", _sigmoid_np(a.data), (a,), vjp)
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed stably."""
    a = as_tensor(a)
    return make_op("softplus", np.logaddexp(0.0, a.data), (a,),
                   lambda g: (mul(g, sigmoid(a)),))


def activation(name: str, a, alpha: float = 0.2) -> Tensor:
    if name == "relu":
        return relu(a)
    if name == "leaky_relu":
        return leaky_relu(a, alpha)
    if name == "tanh":
        return tanh(a)
    if name == "sigmoid":
        return sigmoid(a)
    if name == "linear":
        return as_tensor(a)
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = None

    def vjp(g):
        return (sub(g, mul(exp(out), sum(g, axis=axis, keepdims=True))),)

    out = make_op("log_softmax", out_data, (a,), vjp)
    return out


# -- losses ----------------------------------------------------------------

def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``logits`` (N x classes)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels {labels.shape} do not align with logits {logits.shape}")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return neg(mean(sum(mul(log_softmax(logits), _const(onehot)), axis=1)))


def mse(a, b) -> Tensor:
    diff = sub(a, b)
    return mean(mul(diff, diff))
