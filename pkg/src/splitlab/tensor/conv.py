"""2-D convolution and its transpose (NCHW layout, kernels F x C x kh x kw).

All three primitives are partial derivatives of the trilinear form
``<conv2d(x, k), g>``: the forward convolution, the input gradient (which is
the transposed convolution) and the kernel gradient. Each one's VJP is
expressed with the other two, so the family is closed under differentiation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .core import ShapeError, Tensor, as_tensor, make_op


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def tconv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def _check(x_shape, k_shape, stride, padding):
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} / padding {padding}")
    _, _, h, w = x_shape
    _, _, kh, kw = k_shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} is larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, ho: int, wo: int):
    """Strided view of patches with shape N x C x ho x wo x kh x kw."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    x = np.ascontiguousarray(x)
    sn, sc, sh, sw = x.strides
    n, c = x.shape[:2]
    return as_strided(x, (n, c, ho, wo, kh, kw),
                      (sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)


def conv2d_np(x, k, stride, padding):
    n, c, h, w = x.shape
    f, c2, kh, kw = k.shape
    if c != c2:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {k.shape}")
    _check(x.shape, k.shape, stride, padding)
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    cols = _windows(x, kh, kw, stride, padding, ho, wo)
    out = np.tensordot(cols, k, axes=([1, 4, 5], [1, 2, 3]))  # n ho wo f
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv_input_np(g, k, stride, padding, in_hw):
    """Adjoint of conv2d w.r.t. its input, for an input of spatial size ``in_hw``."""
    n, f, ho, wo = g.shape
    f2, c, kh, kw = k.shape
    if f != f2:
        raise ShapeError(f"channel mismatch: gradient {g.shape}, kernel {k.shape}")
    h, w = in_hw
    dcols = np.tensordot(g, k, axes=([1], [0]))  # n ho wo c kh kw
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        xp = xp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(xp)


def conv_weight_np(x, g, stride, padding, k_hw):
    """Adjoint of conv2d w.r.t. its kernel."""
    kh, kw = k_hw
    ho, wo = g.shape[2:]
    cols = _windows(x, kh, kw, stride, padding, ho, wo)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # f c kh kw


def conv_weight_per_example_np(x, g, stride, padding, k_hw):
    """Kernel gradient for each example separately: N x F x C x kh x kw."""
    kh, kw = k_hw
    n, f, ho, wo = g.shape
    c = x.shape[1]
    cols = _windows(x, kh, kw, stride, padding, ho, wo)
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    out = np.matmul(g.reshape(n, f, ho * wo), cols)
    return out.reshape(n, f, c, kh, kw)


def _conv(x: Tensor, k: Tensor, stride: int, padding: int) -> Tensor:
    in_hw = x.shape[2:]
    k_hw = k.shape[2:]

    def vjp(g):
        gx = _conv_input(g, k, stride, padding, in_hw) if x.requires_grad else None
        gk = _conv_weight(x, g, stride, padding, k_hw) if k.requires_grad else None
        return gx, gk

    return make_op("conv2d", conv2d_np(x.data, k.data, stride, padding), (x, k), vjp)


def _conv_input(g: Tensor, k: Tensor, stride: int, padding: int, in_hw) -> Tensor:
    def vjp(h):
        gg = _conv(h, k, stride, padding) if g.requires_grad else None
        gk = _conv_weight(h, g, stride, padding, k.shape[2:]) if k.requires_grad else None
        return gg, gk

    data = conv_input_np(g.data, k.data, stride, padding, in_hw)
    return make_op("conv_input", data, (g, k), vjp)


def _conv_weight(x: Tensor, g: Tensor, stride: int, padding: int, k_hw) -> Tensor:
    in_hw = x.shape[2:]

    def vjp(h):
        gx = _conv_input(g, h, stride, padding, in_hw) if x.requires_grad else None
        gg = _conv(x, h, stride, padding) if g.requires_grad else None
        return gx, gg

    data = conv_weight_np(x.data, g.data, stride, padding, k_hw)
    return make_op("conv_weight", data, (x, g), vjp)


def conv2d(x, k, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of N x C x H x W input with F x C x kh x kw kernels."""
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {k.shape}")
    return _conv(x, k, int(stride), int(padding))


def transposed_conv2d(x, k, stride: int = 1, padding: int = 0) -> Tensor:
    """Transpose of ``conv2d`` with kernel ``k``: F-channel input, C-channel output.

    Output spatial size is ``(H - 1) * stride - 2 * padding + kh``.
    """
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"transposed_conv2d expects 4-D tensors, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[0]:
        raise ShapeError(f"transposed_conv2d channel mismatch: input {x.shape}, kernel {k.shape}")
    kh, kw = k.shape[2:]
    h = tconv_output_size(x.shape[2], kh, stride, padding)
    w = tconv_output_size(x.shape[3], kw, stride, padding)
    if h < 1 or w < 1:
        raise ShapeError(f"transposed_conv2d output would be empty ({h}x{w})")
    _check((0, 0, h, w), k.shape, stride, padding)
    return _conv_input(x, k, int(stride), int(padding), (h, w))
