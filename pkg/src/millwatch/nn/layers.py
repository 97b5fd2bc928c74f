"""Layer implementations: Conv1D, MaxPool1D, ReLU, BatchNorm1D, Linear.

Each layer owns its learnable arrays, caches what it needs during forward,
and produces parameter gradients plus the input gradient on backward.
Training and gradient checks run in double precision throughout.
"""

import numpy as np

from ..errors import NonFiniteError, ShapeMismatchError
from . import kernels


def as_tensor(x, name="input"):
    """Coerce to a C-contiguous float64 array of rank <= 3."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim > 3:
        raise ShapeMismatchError(f"{name}: rank {arr.ndim} exceeds 3")
    return arr


def require_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values entering {where}")


class Layer:
    """Base class; subclasses set `kind` and implement forward/backward."""

    kind = "Layer"

    def parameters(self):
        """Live learnable arrays, updated in place by the optimizer."""
        return []

    def gradients(self):
        """Gradient arrays aligned with parameters(); valid after backward."""
        return []

    def state_arrays(self):
        """Non-learnable persistent state (batch-norm running stats)."""
        return []

    def param_count(self, convention="paper"):
        return 0

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


class Conv1D(Layer):
    """1D convolution, stride 1, zero 'same' padding, no bias.

    out[b, c, t] = sum over (j, a) of x[b, j, t + a - (K-1)//2] * kernel[c, j, a],
    terms accumulated in ascending (j, a) order; positions outside the input
    contribute zero.
    """

    kind = "Conv1D"

    def __init__(self, c_in, c_out, k=3, rng=None):
        if k < 1 or k % 2 == 0:
            raise ShapeMismatchError(f"Conv1D kernel width must be odd, got {k}")
        self.c_in = c_in
        self.c_out = c_out
        self.k = k
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = 1.0 / np.sqrt(c_in * k)
        self.kernel = rng.uniform(-limit, limit, size=(c_out, c_in, k))
        self.grad_kernel = np.zeros_like(self.kernel)
        self._x = None

    def parameters(self):
        return [self.kernel]

    def gradients(self):
        return [self.grad_kernel]

    def param_count(self, convention="paper"):
        return self.k * self.c_in * self.c_out

    def forward(self, x, train=False):
        x = as_tensor(x)
        if x.ndim != 3:
            raise ShapeMismatchError(
                f"Conv1D expects (batch, channel, length), got rank {x.ndim}"
            )
        if x.shape[1] != self.c_in:
            raise ShapeMismatchError(
                f"Conv1D channel axis: expected {self.c_in}, got {x.shape[1]}"
            )
        require_finite(x, "Conv1D")
        self._x = x if train else None
        return kernels.conv1d_forward(x, self.kernel)

    def backward(self, grad_out):
        if self._x is None:
            raise RuntimeError("Conv1D.backward called without a cached forward")
        grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
        gx, gw = kernels.conv1d_backward(self._x, self.kernel, grad_out)
        self.grad_kernel = gw
        return gx


class MaxPool1D(Layer):
    """Max pooling with width 2, stride 2; ties route to the lower index."""

    kind = "MaxPool1D"

    def __init__(self, width=2):
        if width != 2:
            raise ShapeMismatchError(f"MaxPool1D supports width 2, got {width}")
        self.width = width
        self._idx = None
        self._in_shape = None

    def forward(self, x, train=False):
        x = as_tensor(x)
        if x.ndim != 3:
            raise ShapeMismatchError(
                f"MaxPool1D expects (batch, channel, length), got rank {x.ndim}"
            )
        L = x.shape[2]
        if L % 2 != 0:
            raise ShapeMismatchError(
                f"MaxPool1D length axis must be even, got {L}"
            )
        require_finite(x, "MaxPool1D")
        xr = x.reshape(x.shape[0], x.shape[1], L // 2, 2)
        idx = xr.argmax(axis=3)  # argmax returns the first maximum: lower index wins
        out = np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]
        if train:
            self._idx = idx
            self._in_shape = x.shape
        return out

    def backward(self, grad_out):
        if self._idx is None:
            raise RuntimeError("MaxPool1D.backward called without a cached forward")
        B, C, L = self._in_shape
        gxr = np.zeros((B, C, L // 2, 2))
        np.put_along_axis(gxr, self._idx[..., None], grad_out[..., None], axis=3)
        return gxr.reshape(B, C, L)


class ReLU(Layer):
    """Elementwise max(0, x); the subgradient at 0 is fixed to 0."""

    kind = "ReLU"

    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        x = as_tensor(x)
        require_finite(x, "ReLU")
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad_out):
        if self._mask is None:
            raise RuntimeError("ReLU.backward called without a cached forward")
        return grad_out * self._mask


class BatchNorm1D(Layer):
    """Per-channel batch normalization for (B, C, L) or (B, C) inputs.

    Train mode normalizes with biased batch statistics and updates the running
    mean/variance with momentum; infer mode normalizes with the running stats.
    The running variance stores the biased batch variance, so setting running
    stats equal to a batch's stats makes infer output equal train output.
    """

    kind = "BatchNorm1D"

    def __init__(self, c, eps=1e-5, momentum=0.1):
        self.c = c
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(c)
        self.beta = np.zeros(c)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.grad_gamma = np.zeros(c)
        self.grad_beta = np.zeros(c)
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def gradients(self):
        return [self.grad_gamma, self.grad_beta]

    def state_arrays(self):
        return [self.running_mean, self.running_var]

    def param_count(self, convention="paper"):
        # The paper's tables report 3 values per channel; gamma and beta are
        # the learnable ones.
        return 3 * self.c if convention == "paper" else 2 * self.c

    def _check(self, x):
        if x.ndim not in (2, 3):
            raise ShapeMismatchError(
                f"BatchNorm1D expects rank 2 or 3, got rank {x.ndim}"
            )
        if x.shape[1] != self.c:
            raise ShapeMismatchError(
                f"BatchNorm1D channel axis: expected {self.c}, got {x.shape[1]}"
            )

    @staticmethod
    def _expand(v, ndim):
        return v[None, :, None] if ndim == 3 else v[None, :]

    def forward(self, x, train=False):
        x = as_tensor(x)
        self._check(x)
        require_finite(x, "BatchNorm1D")
        axes = (0, 2) if x.ndim == 3 else (0,)
        if train:
            if x.shape[0] < 2:
                raise ShapeMismatchError(
                    "BatchNorm1D train mode needs batch size >= 2 "
                    "(variance undefined otherwise)"
                )
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._expand(mean, x.ndim)) * self._expand(inv, x.ndim)
        out = self._expand(self.gamma, x.ndim) * xhat + self._expand(self.beta, x.ndim)
        if train:
            self._cache = (xhat, inv, axes, x.ndim)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("BatchNorm1D.backward called without a cached forward")
        xhat, inv, axes, ndim = self._cache
        g = grad_out
        self.grad_beta = g.sum(axis=axes)
        self.grad_gamma = (g * xhat).sum(axis=axes)
        gxhat = g * self._expand(self.gamma, ndim)
        m1 = gxhat.mean(axis=axes, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
        return self._expand(inv, ndim) * (gxhat - m1 - xhat * m2)


class Linear(Layer):
    """Fully connected layer: out = x @ W + b, accumulated over ascending
    input index with the bias added last.

    A rank-3 input (B, C, L) is flattened row-major to (B, C*L) on the way in
    and the input gradient is reshaped back on the way out.
    """

    kind = "Linear"

    def __init__(self, d_in, d_out, rng=None):
        self.d_in = d_in
        self.d_out = d_out
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = 1.0 / np.sqrt(d_in)
        self.weight = rng.uniform(-limit, limit, size=(d_in, d_out))
        self.bias = np.zeros(d_out)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None
        self._in_shape = None

    def parameters(self):
        return [self.weight, self.bias]

    def gradients(self):
        return [self.grad_weight, self.grad_bias]

    def param_count(self, convention="paper"):
        return self.d_in * self.d_out + self.d_out

    def forward(self, x, train=False):
        x = as_tensor(x)
        in_shape = x.shape
        if x.ndim == 3:
            x = x.reshape(x.shape[0], -1)
        elif x.ndim != 2:
            raise ShapeMismatchError(f"Linear expects rank 2 or 3, got rank {x.ndim}")
        if x.shape[1] != self.d_in:
            raise ShapeMismatchError(
                f"Linear feature axis: expected {self.d_in}, got {x.shape[1]}"
            )
        require_finite(x, "Linear")
        if train:
            self._x = x
            self._in_shape = in_shape
        return kernels.linear_forward(x, self.weight, self.bias)

    def backward(self, grad_out):
        if self._x is None:
            raise RuntimeError("Linear.backward called without a cached forward")
        grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
        gx, gw, gb = kernels.linear_backward(self._x, self.weight, grad_out)
        self.grad_weight = gw
        self.grad_bias = gb
        return gx.reshape(self._in_shape)
