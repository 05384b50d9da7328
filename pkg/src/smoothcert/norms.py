"""Four normalization layers that differ only in where statistics come from.

batch:    mean/variance over (N, H, W) per channel; training batches also
          update running statistics, and eval mode normalizes with those
          stored values instead of the current batch.  This is the one kind
          whose eval behavior depends on what the layer saw during training.
instance: statistics over (H, W) per sample and channel.
group:    statistics over (H, W) and the channels of each group, per sample.
layer:    statistics over (C, H, W) per sample.

All kinds share the same per-channel affine transform (2*C learnable
scalars) and the same eps.  Instance and layer are implemented as the
group cases G = C and G = 1.
"""

import numpy as np

from .layers import ShapeError
from .tensor import Tensor

NORM_KINDS = ("batch", "instance", "group", "layer")


def default_groups(channels):
    return min(32, channels)


class NormLayer:
    kind = "norm"

    def __init__(self, norm_kind, channels, groups=None, momentum=0.1, eps=1e-5,
                 name="norm"):
        if norm_kind not in NORM_KINDS:
            raise ValueError(f"{name}: unknown norm kind {norm_kind!r}")
        if channels < 1:
            raise ValueError(f"{name}: channels must be positive")
        if not 0.0 < momentum <= 1.0:
            raise ValueError(f"{name}: momentum outside (0, 1]")
        if eps <= 0.0:
            raise ValueError(f"{name}: eps must be positive")
        self.norm_kind = norm_kind
        self.channels = int(channels)
        if norm_kind == "group":
            groups = default_groups(channels) if groups is None else int(groups)
            if groups < 1 or channels % groups != 0:
                raise ValueError(f"{name}: channels {channels} not divisible by groups {groups}")
            self.groups = groups
        else:
            self.groups = {"instance": self.channels, "layer": 1}.get(norm_kind)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.name = name
        self.gamma = Tensor(np.ones(channels))
        self.beta = Tensor(np.zeros(channels))
        self.freeze_stats = False
        if norm_kind == "batch":
            self.running_mean = np.zeros(channels, dtype=np.float32)
            self.running_var = np.ones(channels, dtype=np.float32)
            self.batches_tracked = 0
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state_items(self):
        if self.norm_kind != "batch":
            return []
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var),
                ("batches_tracked", np.array([self.batches_tracked], dtype=np.float32))]

    def load_state_items(self, items):
        if self.norm_kind != "batch":
            return
        self.running_mean = np.asarray(items["running_mean"], dtype=np.float32).copy()
        self.running_var = np.asarray(items["running_var"], dtype=np.float32).copy()
        if np.any(self.running_var < 0):
            raise ValueError(f"{self.name}: negative running variance in loaded state")
        self.batches_tracked = int(round(float(np.asarray(items["batches_tracked"]).ravel()[0])))

    def init_parameters(self, rng):
        self.gamma.data = np.ones(self.channels, dtype=self.gamma.dtype)
        self.beta.data = np.zeros(self.channels, dtype=self.beta.dtype)
        if self.norm_kind == "batch":
            self.running_mean = np.zeros(self.channels, dtype=np.float32)
            self.running_var = np.ones(self.channels, dtype=np.float32)
            self.batches_tracked = 0

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.channels:
            raise ShapeError(f"{self.name} (norm/{self.norm_kind}): expected input "
                             f"[{self.channels},H,W], got {in_shape}")
        return tuple(in_shape)

    # -- forward ---------------------------------------------------------

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name} (norm/{self.norm_kind}): expected input "
                             f"[N, {self.channels}, H, W], got {x.shape}")
        if self.norm_kind == "batch":
            return self._forward_batch(x, train)
        return self._forward_grouped(x, train)

    def _affine(self, xhat):
        g = self.gamma.data.astype(xhat.dtype, copy=False)[None, :, None, None]
        b = self.beta.data.astype(xhat.dtype, copy=False)[None, :, None, None]
        return xhat * g + b

    def _forward_batch(self, x, train):
        if train:
            mean64 = x.mean(axis=(0, 2, 3), dtype=np.float64)
            var64 = x.var(axis=(0, 2, 3), dtype=np.float64)  # population variance
            if not self.freeze_stats:
                m = self.momentum
                self.running_mean = ((1.0 - m) * self.running_mean + m * mean64).astype(np.float32)
                self.running_var = ((1.0 - m) * self.running_var + m * var64).astype(np.float32)
                self.batches_tracked += 1
            mean = mean64.astype(x.dtype)
            invstd = (1.0 / np.sqrt(var64 + self.eps)).astype(x.dtype)
        else:
            if self.batches_tracked == 0:
                raise RuntimeError(f"{self.name}: eval-mode batch norm requested but running "
                                   "statistics were never updated by a training batch")
            mean = self.running_mean.astype(x.dtype, copy=False)
            invstd = (1.0 / np.sqrt(self.running_var.astype(np.float64) + self.eps)).astype(x.dtype)
        xhat = (x - mean[None, :, None, None]) * invstd[None, :, None, None]
        if train:
            self._cache = ("batch", xhat, invstd)
        return self._affine(xhat)

    def _forward_grouped(self, x, train):
        n, c, h, w = x.shape
        g = self.groups
        xg = x.reshape(n, g, c // g, h, w)
        mean = xg.mean(axis=(2, 3, 4), dtype=np.float64)
        var = xg.var(axis=(2, 3, 4), dtype=np.float64)
        invstd = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        mean = mean.astype(x.dtype)
        xhat = ((xg - mean[:, :, None, None, None]) * invstd[:, :, None, None, None]) \
            .reshape(n, c, h, w)
        if train:
            self._cache = ("grouped", xhat, invstd)
        return self._affine(xhat)

    # -- backward --------------------------------------------------------

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before a training forward")
        mode, xhat, invstd = self._cache
        self.gamma.accumulate_grad((dy * xhat).sum(axis=(0, 2, 3), dtype=np.float64))
        self.beta.accumulate_grad(dy.sum(axis=(0, 2, 3), dtype=np.float64))
        dxhat = dy * self.gamma.data.astype(dy.dtype, copy=False)[None, :, None, None]
        if mode == "batch":
            n, c, h, w = dy.shape
            m = n * h * w
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True, dtype=np.float64).astype(dy.dtype)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True, dtype=np.float64).astype(dy.dtype)
            dx = invstd[None, :, None, None] * (dxhat - s1 / m - xhat * (s2 / m))
            return dx
        n, c, h, w = dy.shape
        g = self.groups
        dxh = dxhat.reshape(n, g, c // g, h, w)
        xh = xhat.reshape(n, g, c // g, h, w)
        m = (c // g) * h * w
        s1 = dxh.sum(axis=(2, 3, 4), keepdims=True, dtype=np.float64).astype(dy.dtype)
        s2 = (dxh * xh).sum(axis=(2, 3, 4), keepdims=True, dtype=np.float64).astype(dy.dtype)
        dx = invstd[:, :, None, None, None] * (dxh - s1 / m - xh * (s2 / m))
        return dx.reshape(n, c, h, w)
