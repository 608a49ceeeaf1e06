"""Finite-difference checks of hand-written backward passes.

The probe loss is ``sum(R * f(x))`` for a fixed random ``R``, so the analytic
gradient is one backward call with ``R``.  A sample of coordinates of the
input and of every parameter is perturbed by ``+-h`` (central differences).

A coordinate is excluded as non-smooth when its two one-sided differences
disagree by more than ``kink_tol`` times the tensor's gradient scale: the
perturbation then crossed a ReLU hinge, a max-pool tie or a zero of a
complex modulus, where no derivative exists.

Relative error is ``|a - n| / max(|a|, |n|, floor * scale)`` where ``scale``
is the largest analytic gradient entry of the tensor.
"""
import contextlib
from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    checked: int
    excluded: int
    tol: float

    @property
    def passed(self):
        return self.checked > 0 and self.max_rel_err < self.tol

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<28} max_rel_err={self.max_rel_err:.2e} "
                f"checked={self.checked} excluded={self.excluded}")


def rel_err(a, n, scale, floor=1e-3):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)


def _coords(shape, n, rng):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(n, size), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def fd_check(loss, tensor, analytic, name, rng, n_coords=20, h=1e-6,
             kink_tol=1e-4, floor=1e-3, tol=1e-5):
    """Compare ``analytic`` against central differences of ``loss()`` in ``tensor``.

    ``tensor`` is perturbed in place and restored.
    """
    scale = float(np.abs(analytic).max()) or 1.0
    worst, checked, excluded = 0.0, 0, 0
    for idx in _coords(tensor.shape, n_coords, rng):
        old = tensor[idx]
        f0 = loss()
        tensor[idx] = old + h
        fp = loss()
        tensor[idx] = old - h
        fm = loss()
        tensor[idx] = old
        d_plus, d_minus = (fp - f0) / h, (f0 - fm) / h
        if abs(d_plus - d_minus) > kink_tol * scale:
            excluded += 1
            continue
        num = (fp - fm) / (2 * h)
        worst = max(worst, float(rel_err(analytic[idx], num, scale, floor)))
        checked += 1
    return CheckResult(name, worst, checked, excluded, tol)


def check_layer(layer, x, name=None, seed=0, n_coords=20, tol=1e-5, **kw):
    """FD check of one layer with respect to its input and every parameter."""
    rng = np.random.default_rng([seed, 0x6763])
    x = np.array(x, dtype=np.float64)
    layer.astype(np.float64)
    reseed = isinstance(layer, nn.Dropout)

    def run(train=True):
        if reseed:
            layer.reseed(seed)
        return layer.forward(x, train)

    R = rng.standard_normal(run().shape)

    def loss():
        return float(np.sum(R * run()))

    run()
    gx = layer.backward(R)
    grads = {k: layer.grads[k].copy() for k in layer.params}
    name = name or layer.kind
    results = [fd_check(loss, x, gx, f"{name}:input", rng, n_coords, tol=tol, **kw)]
    for k, g in grads.items():
        results.append(fd_check(loss, layer.params[k], g, f"{name}:{k}", rng, n_coords, tol=tol, **kw))
    return results


def check_network(net, x, name="net", seed=0, n_coords=8, tol=1e-5, **kw):
    """FD check of a whole :class:`~liwn.models.Network` in train mode (float64)."""
    rng = np.random.default_rng([seed, 0x6763])
    if net.dtype != np.float64:
        raise ValueError("gradient checks need a float64 network")
    x = np.array(x, dtype=np.float64)

    def run():
        net.reseed_dropout(seed)
        return net.forward(x, train=True)

    R = rng.standard_normal(run().shape)

    def loss():
        return float(np.sum(R * run()))

    run()
    gx = net.backward(R)
    results = [fd_check(loss, x, gx, f"{name}:input", rng, n_coords, tol=tol, **kw)]
    for key, g in net.grads().items():
        g = g.copy()
        layer = net.layers[net.names.index(key.split(".")[0])]
        results.append(fd_check(loss, layer.params[key.split(".", 1)[1]], g,
                                f"{name}:{key}", rng, n_coords, tol=tol, **kw))
    return results


@contextlib.contextmanager
def inject_fault(layer, factor=1.01):
    """Temporarily scale the input gradient returned by ``layer.backward``."""
    original = layer.backward

    def broken(grad):
        return original(grad) * factor

    layer.backward = broken
    try:
        yield layer
    finally:
        del layer.backward


def layer_zoo(seed=0, c=3, hw=8):
    """One small instance of every layer kind, with a matching input."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, c, hw, hw))
    zoo = [
        ("conv3x3", nn.Conv2d(c, 4, 3, 1, True, rng), x),
        ("conv3x3-s2", nn.Conv2d(c, 4, 3, 2, False, rng), x),
        ("conv1x1", nn.Conv2d(c, 4, 1, 1, True, rng), x),
        ("relu", nn.ReLU(), x),
        ("bn", nn.BatchNorm2d(c), x),
        ("maxpool", nn.MaxPool2x(), x),
        ("gap", nn.GlobalAvgPool(), x),
        ("fc", nn.Linear(c * 4, 5, rng), rng.standard_normal((2, c * 4))),
        ("dropout", nn.Dropout(0.3), x),
        ("inv-learned", nn.Invariant(c, 5, True, rng, apply_relu=False), x),
        ("inv-relu-up", nn.Invariant(c, 5, True, rng, apply_relu=True, upsample_out=True), x),
        ("inv-fixed", nn.Invariant(c, 7 * c, False, alpha=3.0, apply_relu=True), x),
    ]
    bn = zoo[4][1]
    bn.params["gamma"][:] = rng.uniform(0.5, 1.5, c)
    bn.params["beta"][:] = rng.standard_normal(c)
    inv = zoo[10][1]
    inv.params["alpha"][:] = rng.uniform(0.5, 1.0, c)
    return zoo
