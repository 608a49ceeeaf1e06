"""Small trainable layers with hand-written backward passes.

Every layer exposes ``forward(x, train)`` and ``backward(grad)``; parameters
and their gradients live in the ``params`` / ``grads`` dicts keyed by short
names ("W", "b", ...).  Activations are (N, C, H, W).
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dtcwt import get_filters
from .invariant import (init_params, inv_backward,
                        inv_forward, lowpass_gain, make_identity_mixing,
                        project_nonexpansive)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def astype(self, dtype):
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)
        return self


def he_uniform(shape, fan_in, rng, dtype):
    s = np.sqrt(6.0 / fan_in)
    return rng.uniform(-s, s, size=shape).astype(dtype)


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, c_in, c_out, L=3, stride=1, bias=False, rng=None, dtype=np.float32):
        super().__init__()
        if L % 2 == 0:
            raise ValueError("kernel size must be odd")
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.L, self.stride = c_in, c_out, L, stride
        self.pad = (L - 1) // 2
        self.params["W"] = he_uniform((c_out, c_in, L, L), c_in * L * L, rng, dtype)
        if bias:
            self.params["b"] = np.zeros(c_out, dtype=dtype)
        self._cache = None

    def forward(self, x, train=False):
        N, C, H, W = x.shape
        if C != self.c_in:
            raise ValueError(f"conv expects {self.c_in} channels, got {C}")
        cols = kernels.im2col(x, self.L, self.stride, self.pad)
        Wm = self.params["W"].reshape(self.c_out, -1)
        y = np.matmul(Wm, cols)
        Ho = (H + 2 * self.pad - self.L) // self.stride + 1
        Wo = (W + 2 * self.pad - self.L) // self.stride + 1
        y = y.reshape(N, self.c_out, Ho, Wo)
        if "b" in self.params:
            y = y + self.params["b"][:, None, None]
        if train:
            self._cache = (x.shape, cols)
        return y

    def backward(self, grad):
        shape, cols = self._cache
        N, C, H, W = shape
        g = grad.reshape(N, self.c_out, -1)
        self.grads["W"] = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(self.params["W"].shape)
        if "b" in self.params:
            self.grads["b"] = grad.sum(axis=(0, 2, 3))
        Wm = self.params["W"].reshape(self.c_out, -1)
        gcols = np.matmul(Wm.T, g)
        return kernels.col2im(gcols, C, H, W, self.L, self.stride, self.pad)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._mask


class BatchNorm2d(Layer):
    """Batch norm with biased batch variance; running stats use the same estimator."""

    kind = "bn"

    def __init__(self, c, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.c, self.momentum, self.eps = c, momentum, eps
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)

    def forward(self, x, train=False):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * var).astype(x.dtype)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[:, None, None]) * inv[:, None, None]
        if train:
            self._cache = (xhat, inv)
        return self.params["gamma"][:, None, None] * xhat + self.params["beta"][:, None, None]

    def backward(self, grad):
        xhat, inv = self._cache
        self.grads["gamma"] = (grad * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = grad.sum(axis=(0, 2, 3))
        gx = grad * self.params["gamma"][:, None, None]
        m = gx.mean(axis=(0, 2, 3), keepdims=True)
        mx = (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return (gx - m - xhat * mx) * inv[:, None, None]


class MaxPool2x(Layer):
    kind = "maxpool"

    def forward(self, x, train=False):
        N, C, H, W = x.shape
        if H % 2 or W % 2:
            raise ValueError("max pool needs even extents")
        blocks = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
        arg = blocks.argmax(-1)
        if train:
            self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], -1)[..., 0]

    def backward(self, grad):
        (N, C, H, W), arg = self._cache
        out = np.zeros((N, C, H // 2, W // 2, 4), dtype=grad.dtype)
        np.put_along_axis(out, arg[..., None], grad[..., None], -1)
        return out.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)


class GlobalAvgPool(Layer):
    kind = "gap"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        N, C, H, W = self._shape
        return np.broadcast_to(grad[:, :, None, None] / (H * W), self._shape).copy()


class Linear(Layer):
    kind = "fc"

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        s = np.sqrt(1.0 / n_in)
        self.params["W"] = rng.uniform(-s, s, size=(n_out, n_in)).astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, train=False):
        if train:
            self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, grad):
        self.grads["W"] = grad.T @ self._x
        self.grads["b"] = grad.sum(0)
        return grad @ self.params["W"]


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p, seed=0):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("drop probability must be in [0, 1)")
        self.p = p
        self.reseed(seed)

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, x, train=False):
        if not train or self.p == 0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = keep.astype(x.dtype) / (1 - self.p)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Invariant(Layer):
    """Locally invariant layer as a network node; ``learned=False`` freezes A."""

    kind = "inv"

    def __init__(self, c_in, c_out, learned=True, rng=None, dtype=np.float32,
                 apply_relu=False, upsample_out=False, alpha=0.0,
                 magnitude_floor=0.0, projection="none", filters=None):
        super().__init__()
        self.filters = filters or get_filters()
        self.learned = learned
        rng = rng or np.random.default_rng(0)
        if learned:
            p = init_params(c_in, c_out, rng, self.filters, dtype=dtype)
        else:
            if c_out != 7 * c_in:
                raise ValueError("a fixed (identity) invariant layer has 7 * c_in outputs")
            p = make_identity_mixing(c_in, lowpass_gain(self.filters), alpha, dtype=dtype)
        p.apply_relu = apply_relu
        p.upsample_out = upsample_out
        p.magnitude_floor = magnitude_floor
        p.projection = projection
        self._p = p
        self.c_in, self.c_out = c_in, c_out
        # without the internal ReLU the alpha term cancels exactly, so it is
        # only trained when the ReLU is on
        if learned:
            self.params["A"] = p.A
            if apply_relu:
                self.params["alpha"] = p.alpha

    @property
    def layer_params(self):
        for k in ("A", "alpha"):
            if k in self.params:
                setattr(self._p, k, self.params[k])
        return self._p

    def forward(self, x, train=False):
        out, self._cache = inv_forward(x, self.layer_params, self.filters,
                                       "train" if train else "eval")
        return out

    def backward(self, grad):
        gx, gA, ga = inv_backward(grad, self._cache, self.layer_params)
        if "A" in self.params:
            self.grads["A"] = gA
        if "alpha" in self.params:
            self.grads["alpha"] = ga
        return gx

    def project(self):
        if self.learned and self._p.projection != "none":
            self.params["A"] = project_nonexpansive(self.layer_params).A

    def astype(self, dtype):
        super().astype(dtype)
        self._p.A = self._p.A.astype(dtype)
        self._p.alpha = self._p.alpha.astype(dtype)
        return self


# ---------------------------------------------------------------------------
# loss and optimiser

def softmax_cross_entropy(logits, labels):
    """Mean loss over the batch and its gradient with respect to ``logits``."""
    labels = np.asarray(labels)
    N, K = logits.shape
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(N), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(N), labels] -= 1
    return float(loss), grad / N


@dataclass
class TrainConfig:
    lr0: float = 0.5
    momentum: float = 0.85
    batch: int = 128
    weight_decay: float = 1e-4
    milestones: tuple = (60, 80, 100)
    gamma: float = 0.2
    epochs: int = 120

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if min(self.lr0, self.batch, self.gamma, self.epochs) <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("training hyperparameters must be positive")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be increasing")

    def lr(self, epoch):
        return self.lr0 * self.gamma ** sum(1 for m in self.milestones if m <= epoch)


@dataclass
class SGD:
    """Classical momentum with L2 decay folded into the gradient."""

    config: TrainConfig
    velocity: dict = field(default_factory=dict)
    steps: int = 0

    def step(self, params, grads, epoch):
        lr = self.config.lr(epoch)
        m, wd = self.config.momentum, self.config.weight_decay
        for name, w in params.items():
            g = grads[name] + wd * w
            v = self.velocity.get(name)
            v = g.copy() if v is None else m * v + g
            self.velocity[name] = v
            w -= (lr * v).astype(w.dtype)
        self.steps += 1


def sgd_momentum_step(params, grads, state, config, epoch):
    """Functional form of :meth:`SGD.step`; updates ``params`` in place."""
    state.config = config
    state.step(params, grads, epoch)
    return params
