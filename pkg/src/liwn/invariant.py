"""Locally invariant layer: learned mixing of scattering lowpass and modulus terms.

Forward pipeline for input ``x`` with ``C`` channels::

    x + alpha  ->  propagator (J=1)  ->  z (7C channels)  ->  y = A z
      -> ReLU (optional)  ->  minus the alpha contribution of the lowpass
      -> bilinear 2x upsample (optional)

The alpha bias keeps the lowpass positive so a ReLU leaves it untouched; the
correction term removes it again after the nonlinearity.  With ``A = I`` this
reproduces the wavelet modulus propagator exactly.
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .dtcwt import get_filters, dtcwt_forward, fold_trees
from .scattering import GAMMA, propagate, propagate_backward
from .tensor import (bilinear_upsample_2x, bilinear_upsample_2x_adjoint,
                     channel_matmul, channel_matmul_adjoint)


@lru_cache(maxsize=8)
def _lowpass_gain(filters):
    ones = np.ones((4, 4))
    return float(fold_trees(dtcwt_forward(ones, 1, filters).lowpass)[1, 1])


def lowpass_gain(filters=None):
    """Response of the decimated lowpass channel to a unit constant image."""
    return _lowpass_gain(filters or get_filters())


@dataclass
class InvariantLayerParams:
    A: np.ndarray
    alpha: np.ndarray
    phi_norm: float
    apply_relu: bool = True
    upsample_out: bool = False
    magnitude_floor: float = 0.0
    # "none", "row" (each row of A has norm <= 1) or "spectral" (||A||_2 <= 1)
    projection: str = "none"

    def __post_init__(self):
        if self.A.ndim != 2 or self.A.shape[1] != GAMMA * len(self.alpha):
            raise ValueError(f"A must have {GAMMA} * C_in = {GAMMA * len(self.alpha)} "
                             f"columns, got shape {self.A.shape}")
        if self.phi_norm <= 0:
            raise ValueError("phi_norm must be positive")
        if self.magnitude_floor < 0:
            raise ValueError("magnitude_floor must be >= 0")
        if self.projection not in ("none", "row", "spectral"):
            raise ValueError(f"unknown projection {self.projection!r}")

    @property
    def c_in(self):
        return len(self.alpha)

    @property
    def c_out(self):
        return self.A.shape[0]

    @property
    def nonexpansive_projection(self):
        return self.projection != "none"

    def lowpass_columns(self):
        return np.arange(self.c_in) * GAMMA


@dataclass
class LayerCache:
    x_shape: tuple
    prop: object
    z: np.ndarray
    y: np.ndarray = field(repr=False)


def init_params(c_in, c_out, rng, filters=None, dtype=np.float64, **flags):
    """Uniform fan-in initialisation of the 1x1 mixing, zero alpha."""
    s = np.sqrt(1.0 / (GAMMA * c_in))
    A = rng.uniform(-s, s, size=(c_out, GAMMA * c_in)).astype(dtype)
    return InvariantLayerParams(A, np.zeros(c_in, dtype=dtype), lowpass_gain(filters), **flags)


def make_identity_mixing(C, phi_norm, alpha_value=0.0, dtype=np.float64):
    """Parameters under which the layer is exactly the wavelet modulus propagator."""
    if C < 1:
        raise ValueError("C must be >= 1")
    return InvariantLayerParams(
        A=np.eye(GAMMA * C, dtype=dtype),
        alpha=np.full(C, alpha_value, dtype=dtype),
        phi_norm=phi_norm,
        apply_relu=True,
    )


def _bias_correction(params):
    lp = params.lowpass_columns()
    return params.A[:, lp] @ (params.alpha * params.phi_norm)


def inv_forward(x, params, filters=None, mode="train"):
    """Returns ``(out, cache)``; ``cache`` is None in eval mode."""
    filters = filters or get_filters()
    x = np.asarray(x)
    if x.shape[-3] != params.c_in:
        raise ValueError(f"layer expects {params.c_in} channels, got {x.shape[-3]}")
    xb = x + params.alpha.astype(x.dtype)[:, None, None]
    z, prop = propagate(xb, filters, params.magnitude_floor)
    y = channel_matmul(z, params.A)
    out = np.maximum(y, 0) if params.apply_relu else y
    if np.any(params.alpha):
        out = out - _bias_correction(params).astype(out.dtype)[:, None, None]
    if params.upsample_out:
        out = bilinear_upsample_2x(out)
    cache = LayerCache(x.shape, prop, z, y) if mode == "train" else None
    return out, cache


def inv_backward(grad_out, cache, params):
    """Returns ``(grad_x, grad_A, grad_alpha)``."""
    if cache is None:
        raise RuntimeError("inv_backward needs the cache of a train-mode forward")
    g = bilinear_upsample_2x_adjoint(grad_out) if params.upsample_out else grad_out
    lp = params.lowpass_columns()
    grad_alpha = np.zeros_like(params.alpha)
    corr_A = None
    if np.any(params.alpha):
        # out -= A[:, lp] @ (alpha * phi)
        gsum = g.sum(axis=tuple(range(g.ndim - 3)) + (-2, -1))
        corr_A = -np.outer(gsum, params.alpha * params.phi_norm)
        grad_alpha = grad_alpha - params.phi_norm * (params.A[:, lp].T @ gsum)
    gy = g * (cache.y > 0) if params.apply_relu else g
    grad_z, grad_A = channel_matmul_adjoint(gy, cache.z, params.A)
    if corr_A is not None:
        grad_A[:, lp] += corr_A
    grad_x = propagate_backward(grad_z, cache.prop)
    grad_alpha = grad_alpha + grad_x.sum(axis=tuple(range(grad_x.ndim - 3)) + (-2, -1))
    return grad_x, grad_A, grad_alpha


def project_nonexpansive(params, mode=None):
    """Scale rows of A to norm <= 1, or the whole matrix to spectral norm <= 1."""
    mode = mode or (params.projection if params.projection != "none" else "row")
    A = params.A
    if mode == "row":
        norms = np.linalg.norm(A, axis=1, keepdims=True)
        A = A / np.maximum(norms, 1.0)
    elif mode == "spectral":
        A = A / max(1.0, float(np.linalg.norm(A, 2)))
    else:
        raise ValueError(f"unknown projection {mode!r}")
    return replace(params, A=A.astype(params.A.dtype, copy=False))
