"""Forward/backward kernels for the layers of the autoencoder.

Tensors are plain numpy arrays in NCHW layout. Every kernel preserves the
floating dtype of its inputs: float32 is used for training, float64 for
gradient checking. Backward passes are hand-paired with their forwards;
there is no autodiff graph.

Convolution is cross-correlation (no kernel flip). Weight layouts:

* ``conv2d``:  ``[out_channels, in_channels, kh, kw]``
* ``tconv2d``: ``[in_channels, out_channels, kh, kw]``
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class ConvParams:
    weights: np.ndarray
    bias: np.ndarray

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(self.weights.astype(dtype), self.bias.astype(dtype))


def _check_4d(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{name} must be 4-D [N,C,H,W], got shape {x.shape}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _conv_checks(x, params, stride, padding):
    _check_4d(x, "input")
    if stride < 1 or padding < 0:
        raise ValueError(f"need stride >= 1 and padding >= 0, got {stride}, {padding}")
    w = params.weights
    if w.ndim != 4 or params.bias.shape != (w.shape[0],):
        raise ValueError(f"bad conv params: weights {w.shape}, bias {params.bias.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {w.shape[1]}")
    kh, kw = w.shape[2:]
    ho = conv_output_size(x.shape[2], kh, stride, padding)
    wo = conv_output_size(x.shape[3], kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"zero-sized output for input {x.shape} and kernel {kh}x{kw}")
    return ho, wo


def _im2col(x, kh, kw, stride, padding, ho, wo):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # -> [N, Ho, Wo, C, kh, kw] flattened to rows of patches
    n, c = x.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d_forward(x: np.ndarray, params: ConvParams, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded 2-D cross-correlation plus per-channel bias."""
    ho, wo = _conv_checks(x, params, stride, padding)
    o, _, kh, kw = params.weights.shape
    cols = _im2col(x, kh, kw, stride, padding, ho, wo)
    out = cols @ params.weights.reshape(o, -1).T + params.bias
    return np.ascontiguousarray(out.reshape(x.shape[0], ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(x, params: ConvParams, grad_out, stride: int = 1, padding: int = 0):
    """Return ``(grad_input, grad_weights, grad_bias)`` for :func:`conv2d_forward`."""
    ho, wo = _conv_checks(x, params, stride, padding)
    o, c, kh, kw = params.weights.shape
    n, _, h, w = x.shape
    if grad_out.shape != (n, o, ho, wo):
        raise ValueError(f"grad_out shape {grad_out.shape} != forward output {(n, o, ho, wo)}")

    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)
    cols = _im2col(x, kh, kw, stride, padding, ho, wo)
    grad_w = (g.T @ cols).reshape(params.weights.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))

    gcols = (g @ params.weights.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    gpad = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.result_type(x, grad_out))
    for i in range(kh):
        for j in range(kw):
            gpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    grad_x = gpad[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def maxpool2_forward(x: np.ndarray):
    """Non-overlapping 2x2 max pooling.

    Returns ``(output, argmax)`` where ``argmax`` has the output's shape and
    holds, for each output element, the flat index into ``x`` of the first
    maximal element of its window in row-major scan order.
    """
    _check_4d(x, "input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even H and W, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    pos = win.argmax(axis=-1)  # np.argmax returns the first maximum
    out = np.take_along_axis(win, pos[..., None], axis=-1)[..., 0]

    nn, cc, yy, xx = np.indices(out.shape, sparse=True)
    rows = 2 * yy + pos // 2
    cols = 2 * xx + pos % 2
    argmax = ((nn * c + cc) * h + rows) * w + cols
    return out, argmax


def maxpool2_backward(argmax: np.ndarray, grad_out: np.ndarray, input_shape) -> np.ndarray:
    if argmax.shape != grad_out.shape:
        raise ValueError(f"argmax shape {argmax.shape} != grad_out shape {grad_out.shape}")
    input_shape = tuple(input_shape)
    if len(input_shape) != 4 or grad_out.shape != (*input_shape[:2], input_shape[2] // 2, input_shape[3] // 2):
        raise ValueError(f"grad_out {grad_out.shape} does not match pooled input {input_shape}")
    grad = np.zeros(int(np.prod(input_shape)), dtype=grad_out.dtype)
    # windows do not overlap, so every target index is written at most once
    grad[argmax.ravel()] = grad_out.ravel()
    return grad.reshape(input_shape)


def tconv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - 1) * stride + kernel


def _tconv_checks(x, params, stride):
    _check_4d(x, "input")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    w = params.weights
    if w.ndim != 4 or params.bias.shape != (w.shape[1],):
        raise ValueError(f"bad tconv params: weights {w.shape}, bias {params.bias.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {w.shape[0]}")


def tconv2d_forward(x: np.ndarray, params: ConvParams, stride: int = 2) -> np.ndarray:
    """Scatter-accumulate transposed convolution (no padding).

    Output spatial size is ``(H - 1) * stride + k``; for ``k == stride``
    the patches tile without overlap and the size is exactly ``H * stride``.
    """
    _tconv_checks(x, params, stride)
    ci, co, kh, kw = params.weights.shape
    n, _, h, w = x.shape
    patches = (x.transpose(0, 2, 3, 1).reshape(-1, ci) @ params.weights.reshape(ci, -1)).reshape(n, h, w, co, kh, kw)
    ho, wo = tconv_output_size(h, kh, stride), tconv_output_size(w, kw, stride)
    out = np.zeros((n, co, ho, wo), dtype=patches.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * h:stride, j:j + stride * w:stride] += patches[..., i, j].transpose(0, 3, 1, 2)
    out += params.bias[None, :, None, None]
    return out


def tconv2d_backward(x, params: ConvParams, grad_out, stride: int = 2):
    """Return ``(grad_input, grad_weights, grad_bias)`` for :func:`tconv2d_forward`."""
    _tconv_checks(x, params, stride)
    ci, co, kh, kw = params.weights.shape
    n, _, h, w = x.shape
    expected = (n, co, tconv_output_size(h, kh, stride), tconv_output_size(w, kw, stride))
    if grad_out.shape != expected:
        raise ValueError(f"grad_out shape {grad_out.shape} != forward output {expected}")

    gpatch = np.empty((n, h, w, co, kh, kw), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            gpatch[..., i, j] = grad_out[:, :, i:i + stride * h:stride, j:j + stride * w:stride].transpose(0, 2, 3, 1)
    gpatch = gpatch.reshape(n * h * w, co * kh * kw)
    xrows = x.transpose(0, 2, 3, 1).reshape(-1, ci)

    grad_w = (xrows.T @ gpatch).reshape(params.weights.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = (gpatch @ params.weights.reshape(ci, -1).T).reshape(n, h, w, ci).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function with output strictly inside (0, 1).

    Saturated values are clamped to the neighbouring representable numbers
    of 0 and 1, since correctly rounded results would otherwise hit the
    endpoints (already at x ~ 37 in float64, x ~ 17 in float32).
    """
    x = np.asarray(x)
    z = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1 / (1 + z), z / (1 + z))
    dt = y.dtype
    return np.clip(y, np.nextafter(dt.type(0), dt.type(1)), np.nextafter(dt.type(1), dt.type(0)))


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through sigmoid given its cached forward output ``y``."""
    return grad_out * y * (1 - y)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def mse_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return (2 / pred.size) * (pred - target)
