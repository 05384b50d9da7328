"""Layers of the small convolutional networks used throughout: dense, 3x3
convolution via explicit patch expansion, ReLU and flatten.

Every layer follows the same protocol: forward(x, train) caches whatever the
matching backward(dy) needs, backward accumulates parameter gradients into
the layer's tensors and returns the input gradient.  Arrays flow in whatever
float dtype the caller supplies (float32 in training, float64 in the
finite-difference checks).
"""

import numpy as np

from .tensor import Tensor


class ShapeError(ValueError):
    """Input does not match what a layer expects; message names the layer."""


class Dense:
    """Affine map y = x W^T + b with W of shape [fan_out, fan_in]."""

    kind = "dense"

    def __init__(self, fan_in, fan_out, name="dense"):
        self.fan_in = int(fan_in)
        self.fan_out = int(fan_out)
        self.name = name
        self.weight = Tensor(np.zeros((fan_out, fan_in)))
        self.bias = Tensor(np.zeros(fan_out))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def state_items(self):
        return []

    def init_parameters(self, rng):
        std = np.sqrt(2.0 / self.fan_in)
        w = rng.standard_normal((self.fan_out, self.fan_in)) * std
        self.weight.data = w.astype(self.weight.dtype)
        self.bias.data = np.zeros(self.fan_out, dtype=self.bias.dtype)

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.fan_in:
            raise ShapeError(f"{self.name} (dense): expected flat input of {self.fan_in}, got {in_shape}")
        return (self.fan_out,)

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeError(f"{self.name} (dense): expected input [N, {self.fan_in}], got {x.shape}")
        self._x = x if train else None
        w = self.weight.data.astype(x.dtype, copy=False)
        return x @ w.T + self.bias.data.astype(x.dtype, copy=False)

    def backward(self, dy):
        x = self._x
        self.weight.accumulate_grad(dy.T @ x)
        self.bias.accumulate_grad(dy.sum(axis=0, dtype=np.float64))
        return dy @ self.weight.data.astype(dy.dtype, copy=False)


def _im2col3x3(padded):
    """Expand 3x3 patches: padded [N,C,H+2,W+2] -> [N, C, 9, H, W]."""
    n, c, hp, wp = padded.shape
    h, w = hp - 2, wp - 2
    cols = np.empty((n, c, 9, h, w), dtype=padded.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, k] = padded[:, :, di:di + h, dj:dj + w]
            k += 1
    return cols


def _col2im3x3(dcols, h, w):
    """Scatter-add patch gradients back: [N, C, 9, H, W] -> [N, C, H, W].

    Overlapping patches share input pixels, so contributions must accumulate.
    """
    n, c = dcols.shape[:2]
    dpad = np.zeros((n, c, h + 2, w + 2), dtype=dcols.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            dpad[:, :, di:di + h, dj:dj + w] += dcols[:, :, k]
            k += 1
    return dpad[:, :, 1:h + 1, 1:w + 1]


class Conv3x3:
    """3x3 convolution, stride 1, zero padding 1; spatial size is preserved."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, name="conv2d"):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.name = name
        self.weight = Tensor(np.zeros((out_channels, in_channels, 3, 3)))
        self.bias = Tensor(np.zeros(out_channels))
        self._cols = None
        self._hw = None

    def params(self):
        return [self.weight, self.bias]

    def state_items(self):
        return []

    def init_parameters(self, rng):
        fan_in = self.in_channels * 9
        std = np.sqrt(2.0 / fan_in)
        w = rng.standard_normal((self.out_channels, self.in_channels, 3, 3)) * std
        self.weight.data = w.astype(self.weight.dtype)
        self.bias.data = np.zeros(self.out_channels, dtype=self.bias.dtype)

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"{self.name} (conv2d): expected input [{self.in_channels},H,W], got {in_shape}")
        return (self.out_channels,) + tuple(in_shape[1:])

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name} (conv2d): expected input [N, {self.in_channels}, H, W], got {x.shape}")
        n, _, h, w = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = _im2col3x3(padded).reshape(n, self.in_channels * 9, h * w)
        wm = self.weight.data.reshape(self.out_channels, -1).astype(x.dtype, copy=False)
        y = (wm[None] @ cols).reshape(n, self.out_channels, h, w)
        y += self.bias.data.astype(x.dtype, copy=False)[None, :, None, None]
        if train:
            self._cols, self._hw = cols, (h, w)
        return y

    def backward(self, dy):
        cols, (h, w) = self._cols, self._hw
        n = dy.shape[0]
        dyf = dy.reshape(n, self.out_channels, h * w)
        dw = np.tensordot(dyf, cols, axes=([0, 2], [0, 2]))
        self.weight.accumulate_grad(dw.reshape(self.weight.shape))
        self.bias.accumulate_grad(dy.sum(axis=(0, 2, 3), dtype=np.float64))
        wm = self.weight.data.reshape(self.out_channels, -1).astype(dy.dtype, copy=False)
        dcols = (wm.T[None] @ dyf).reshape(n, self.in_channels, 9, h, w)
        return _col2im3x3(dcols, h, w)


class ReLU:
    kind = "relu"

    def __init__(self, name="relu"):
        self.name = name
        self._mask = None

    def params(self):
        return []

    def state_items(self):
        return []

    def init_parameters(self, rng):
        pass

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=True):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class Flatten:
    kind = "flatten"

    def __init__(self, name="flatten"):
        self.name = name
        self._in_shape = None

    def params(self):
        return []

    def state_items(self):
        return []

    def init_parameters(self, rng):
        pass

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=True):
        if train:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)
