"""Forward/backward kernels for the fixed CEDN layer set.

Tensors are plain ``numpy`` arrays laid out (batch, channels, height, width).
Kernels keep the dtype of their operands: training runs in float32, the
gradient checks feed float64.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, ParameterError

AXES = ("batch", "channels", "height", "width")


def _check_4d(x, name):
    if x.ndim != 4:
        raise DimensionError(f"{name} must be 4-D (batch, channels, height, width), got shape {x.shape}")


def _first_mismatch(a, b):
    if len(a) != len(b):
        return None
    for name, x, y in zip(AXES, a, b):
        if x != y:
            return name
    return None


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # (c, k, k, n, ho, wo): columns are output pixels, innermost copy runs along wo
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
    return cols, ho, wo


def _check_conv(x, weights, bias, stride, pad):
    _check_4d(x, "input")
    if weights.ndim != 4:
        raise DimensionError(f"weights must be 4-D (out, in, k, k), got {weights.shape}")
    if weights.shape[1] != x.shape[1]:
        raise DimensionError(
            f"channels: weights expect {weights.shape[1]} input channels, input has {x.shape[1]}",
            axis="channels",
        )
    if weights.shape[2] != weights.shape[3]:
        raise DimensionError(f"kernel must be square, got {weights.shape[2:]}", axis="width")
    if bias is not None and bias.shape != (weights.shape[0],):
        raise DimensionError(
            f"bias must have shape ({weights.shape[0]},), got {bias.shape}", axis="channels"
        )
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ParameterError(f"pad must be >= 0, got {pad}")
    k = weights.shape[2]
    for axis, size in (("height", x.shape[2]), ("width", x.shape[3])):
        if size + 2 * pad < k:
            raise DimensionError(
                f"{axis}: padded size {size + 2 * pad} is smaller than kernel {k}", axis=axis
            )


def conv2d_forward(x, weights, bias=None, stride=1, pad=0, return_cols=False):
    """Cross-correlation of ``x`` with ``weights`` (out, in, k, k)."""
    _check_conv(x, weights, bias, stride, pad)
    f, _, k, _ = weights.shape
    cols, ho, wo = _im2col(x, k, stride, pad)
    out = weights.reshape(f, -1) @ cols
    if bias is not None:
        out += bias[:, None]
    out = np.ascontiguousarray(out.reshape(f, x.shape[0], ho, wo).transpose(1, 0, 2, 3))
    if return_cols:
        return out, cols
    return out


def conv2d_backward(grad_out, cached_input, weights, stride=1, pad=0, cols=None, need_input_grad=True):
    """Gradients of a conv2d_forward call.

    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is false.
    """
    x = cached_input
    _check_conv(x, weights, None, stride, pad)
    n, c, h, w = x.shape
    f, _, k, _ = weights.shape
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    if grad_out.shape != (n, f, ho, wo):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match forward output {(n, f, ho, wo)}",
            axis=_first_mismatch(grad_out.shape, (n, f, ho, wo)),
        )
    if cols is None:
        cols, _, _ = _im2col(x, k, stride, pad)
    g = grad_out.transpose(1, 0, 2, 3).reshape(f, -1)
    grad_w = (g @ cols.T).reshape(weights.shape)
    grad_b = g.sum(axis=1)
    if not need_input_grad:
        return None, grad_w, grad_b

    # channel-major scratch so each kernel tap is a contiguous (c, n, ho, wo) slab
    dcols = (weights.reshape(f, -1).T @ g).reshape(c, k, k, n, ho, wo)
    dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
    dxp = dxp.transpose(1, 0, 2, 3)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp), grad_w, grad_b


@dataclass
class SwitchMap:
    """Argmax offsets (0..3, row-major inside the 2x2 window) of a max-pool.

    ``input_shape`` is the shape before any implicit right/bottom padding, so
    unpooling can crop back to it.
    """

    indices: np.ndarray
    input_shape: tuple

    @property
    def shape(self):
        return self.indices.shape


def maxpool2x2_forward(x, pad_odd=False):
    _check_4d(x, "input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        if not pad_odd:
            axis = "height" if h % 2 else "width"
            raise DimensionError(f"{axis} must be even for 2x2 pooling, got {x.shape}", axis=axis)
        x = np.pad(x, ((0, 0), (0, 0), (0, h % 2), (0, w % 2)))
    ph, pw = x.shape[2] // 2, x.shape[3] // 2
    win = x.reshape(n, c, ph, 2, pw, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ph, pw, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, SwitchMap(idx.astype(np.uint8), (n, c, h, w))


def unpool2x2(x, switches):
    _check_4d(x, "input")
    if x.shape != switches.shape:
        axis = _first_mismatch(x.shape, switches.shape)
        raise DimensionError(
            f"{axis}: input shape {x.shape} does not match switch map {switches.shape}", axis=axis
        )
    n, c, ph, pw = x.shape
    win = np.zeros((n, c, ph, pw, 4), dtype=x.dtype)
    np.put_along_axis(win, switches.indices[..., None].astype(np.intp), x[..., None], axis=-1)
    out = win.reshape(n, c, ph, pw, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ph, 2 * pw)
    h, w = switches.input_shape[2:]
    return np.ascontiguousarray(out[:, :, :h, :w])


def maxpool2x2_backward(grad_out, switches):
    return unpool2x2(grad_out, switches)


def unpool2x2_backward(grad_out, switches):
    n, c, h, w = switches.input_shape
    if grad_out.shape != (n, c, h, w):
        raise DimensionError(f"grad_out shape {grad_out.shape} does not match unpooled shape {switches.input_shape}")
    if h % 2 or w % 2:
        grad_out = np.pad(grad_out, ((0, 0), (0, 0), (0, h % 2), (0, w % 2)))
    ph, pw = switches.shape[2:]
    win = grad_out.reshape(n, c, ph, 2, pw, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ph, pw, 4)
    return np.take_along_axis(win, switches.indices[..., None].astype(np.intp), axis=-1)[..., 0]


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out, y):
    return grad_out * y * (1 - y)


def dropout(x, rate, rng=None, train_mode=True):
    """Inverted dropout. Returns ``(output, mask)`` with a 0/1 mask."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train_mode or rate == 0:
        return x, np.ones(x.shape, dtype=x.dtype)
    if rng is None:
        raise ParameterError("dropout in train mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype)
    return x * mask * x.dtype.type(1.0 / (1.0 - rate)), mask


def dropout_backward(grad_out, mask, rate):
    if rate == 0:
        return grad_out
    return grad_out * mask * grad_out.dtype.type(1.0 / (1.0 - rate))
