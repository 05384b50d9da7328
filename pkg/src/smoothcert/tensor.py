"""Dense float tensors with explicit gradient buffers.

Values live in row-major numpy arrays, float32 by default; reductions that
feed statistics or losses accumulate in float64.  Gradients are plain arrays
of the same shape, allocated lazily and accumulated additively so repeated
backward passes sum until zero_grad is called.
"""

import numpy as np


class Tensor:
    """An n-dimensional float array plus an optional same-shape gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=np.float32):
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def check_finite(self, what="tensor"):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"{what} contains non-finite values")

    def astype(self, dtype):
        """Fresh tensor with converted values and no gradient."""
        return Tensor(self.data, dtype=dtype)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name})"


def check_finite_array(x, what="array"):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains non-finite values")
    return x
