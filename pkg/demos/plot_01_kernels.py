"""
Layer kernels and their gradients
=================================

Every layer of the autoencoder is a pair of plain numpy functions: a
forward pass and a hand-written backward pass. This walk-through runs each
one on a tiny tensor and checks the backward pass against central finite
differences.
"""

import numpy as np

from malaria_ae.kernels import (
    ConvParams,
    conv2d_backward,
    conv2d_forward,
    maxpool2_backward,
    maxpool2_forward,
    tconv2d_forward,
)

rng = np.random.default_rng(0)

###############################################################################
# A 3x3 convolution with padding 1 keeps the spatial size.
x = rng.standard_normal((1, 1, 6, 6))
conv = ConvParams(rng.standard_normal((4, 1, 3, 3)), np.zeros(4))
y = conv2d_forward(x, conv, stride=1, padding=1)
print("conv2d:", x.shape, "->", y.shape)

###############################################################################
# 2x2 max pooling halves it and remembers where each maximum came from.
pooled, argmax = maxpool2_forward(y)
print("maxpool:", y.shape, "->", pooled.shape)

# the gradient lands only on the winning positions
g = maxpool2_backward(argmax, np.ones_like(pooled), y.shape)
print("non-zero gradient entries:", int((g != 0).sum()), "of", g.size)

###############################################################################
# A stride-2, 2x2 transposed convolution doubles the size back.
# Its weights are laid out as [in, out, kh, kw].
up = ConvParams(rng.standard_normal((4, 2, 2, 2)), np.zeros(2))
print("tconv2d:", pooled.shape, "->", tconv2d_forward(pooled, up, stride=2).shape)

###############################################################################
# Finite-difference check of the convolution weight gradient.
upstream = rng.standard_normal(y.shape)
_, grad_w, _ = conv2d_backward(x, conv, upstream, 1, 1)

h = 1e-6
numeric = np.zeros_like(conv.weights)
for idx in np.ndindex(conv.weights.shape):
    old = conv.weights[idx]
    conv.weights[idx] = old + h
    fp = np.sum(conv2d_forward(x, conv, 1, 1) * upstream)
    conv.weights[idx] = old - h
    fm = np.sum(conv2d_forward(x, conv, 1, 1) * upstream)
    conv.weights[idx] = old
    numeric[idx] = (fp - fm) / (2 * h)

err = np.abs(grad_w - numeric).max() / np.abs(numeric).max()
print(f"conv weight gradient relative error: {err:.2e}")
