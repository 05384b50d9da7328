"""Momentum SGD with linear warmup into a cosine learning-rate schedule.

Time t is measured in fractional epochs over the whole run: the rate climbs
linearly from 0 to base_lr across the warmup epochs, then follows half a
cosine down to 0 at t = epochs.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SgdConfig:
    base_lr: float
    epochs: int
    momentum: float = 0.9
    warmup_epochs: int = 0
    batch_size: int = 128

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("SgdConfig: base_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("SgdConfig: momentum outside [0, 1)")
        if self.epochs < 1:
            raise ValueError("SgdConfig: epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("SgdConfig: need 0 <= warmup_epochs < epochs")
        if self.batch_size < 1:
            raise ValueError("SgdConfig: batch_size must be >= 1")


def lr_at(config, t):
    """Learning rate at fractional epoch t of the configured run."""
    t = min(max(float(t), 0.0), float(config.epochs))
    warmup, total = config.warmup_epochs, config.epochs
    if t < warmup:
        return config.base_lr * t / warmup
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * (t - warmup) / (total - warmup)))


class SgdOptimizer:
    """Momentum SGD over a list of tensors: v <- mu*v + g, p <- p - lr*v."""

    def __init__(self, params, config):
        self.params = list(params)
        self.config = config
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, t):
        """Apply one update at fractional epoch t using accumulated gradients."""
        lr = lr_at(self.config, t)
        mu = self.config.momentum
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                raise RuntimeError("sgd step called with no gradient accumulated")
            v *= mu
            v += p.grad
            p.data -= (lr * v).astype(p.dtype, copy=False)
        return lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
