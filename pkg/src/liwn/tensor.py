"""Dense tensor helpers shared by the rest of the package.

Tensors are plain numpy arrays laid out (..., C, H, W).  float64 is used for
verification, float32 for training; nothing in here changes the dtype of its
input.

The central object is :class:`Stage`: a linear map acting along one axis,
stored as a gathered FIR ``y[k] = sum_j w[k, j] * x[idx[k, j]]``.  Boundary
extension, decimation, interleaving of filter trees and interpolation are all
expressed through ``idx``/``w``, so the exact adjoint of every stage comes
for free from :func:`liwn.kernels.scatter_fir`.
"""
from functools import lru_cache

import numpy as np

from . import kernels

__all__ = [
    "Stage", "symmetric_index", "fir_stage", "upsample_stage",
    "separable_filter_2d", "separable_filter_2d_adjoint",
    "bilinear_upsample_2x", "bilinear_upsample_2x_adjoint",
    "channel_matmul", "channel_matmul_adjoint", "make_rng",
]


def make_rng(seed):
    """Seeded generator; identical seeds give identical streams everywhere."""
    return np.random.Generator(np.random.PCG64(seed))


def symmetric_index(i, n):
    """Map integer positions onto [0, n) by half-sample symmetric extension.

    The end samples are repeated: ... x1 x0 | x0 x1 ... x_{n-1} | x_{n-1} ...
    """
    i = np.asarray(i)
    period = 2 * n
    i = np.mod(i, period)
    return np.where(i < n, i, period - 1 - i)


class Stage:
    """A 1-D linear operator from length ``n_in`` to length ``len(idx)``."""

    def __init__(self, idx, w, n_in):
        self.idx = np.ascontiguousarray(idx, dtype=np.intp)
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.n_in = int(n_in)
        if self.idx.shape != self.w.shape or self.idx.ndim != 2:
            raise ValueError("idx and w must be matching 2-D arrays")
        if self.idx.size and (self.idx.min() < 0 or self.idx.max() >= n_in):
            raise ValueError("stage index out of range")

    @property
    def n_out(self):
        return self.idx.shape[0]

    @staticmethod
    def _split(shape, axis):
        axis = axis % len(shape)
        P = int(np.prod(shape[:axis], dtype=np.intp))
        Q = int(np.prod(shape[axis + 1:], dtype=np.intp))
        return axis, P, Q

    def apply(self, x, axis=-1):
        x = np.ascontiguousarray(x)
        axis, P, Q = self._split(x.shape, axis)
        if x.shape[axis] != self.n_in:
            raise ValueError(f"stage expects length {self.n_in}, got {x.shape[axis]}")
        y = kernels.gather_fir(x.reshape(P, self.n_in, Q), self.idx, self.w)
        return y.reshape(x.shape[:axis] + (self.n_out,) + x.shape[axis + 1:])

    def adjoint(self, g, axis=-1):
        g = np.ascontiguousarray(g)
        axis, P, Q = self._split(g.shape, axis)
        if g.shape[axis] != self.n_out:
            raise ValueError(f"adjoint expects length {self.n_out}, got {g.shape[axis]}")
        x = kernels.scatter_fir(g.reshape(P, self.n_out, Q), self.idx, self.w, self.n_in)
        return x.reshape(g.shape[:axis] + (self.n_in,) + g.shape[axis + 1:])

    def matrix(self):
        """Dense (n_out, n_in) matrix; for tests and small problems."""
        M = np.zeros((self.n_out, self.n_in))
        np.add.at(M, (np.arange(self.n_out)[:, None], self.idx), self.w)
        return M


@lru_cache(maxsize=256)
def _fir_stage(n, taps, extension, decimate):
    h = np.asarray(taps, dtype=np.float64)
    m = len(h)
    centre = (m - 1) // 2
    k = np.arange(0, n, decimate)[:, None]
    pos = k + centre - np.arange(m)[None, :]
    w = np.broadcast_to(h, pos.shape).copy()
    if extension == "symmetric":
        idx = symmetric_index(pos, n)
    elif extension == "zero":
        outside = (pos < 0) | (pos >= n)
        w[outside] = 0.0
        idx = np.clip(pos, 0, n - 1)
    else:
        raise ValueError(f"unknown extension {extension!r}")
    return Stage(idx, w, n)


def fir_stage(n, taps, extension="symmetric", decimate=1):
    """Centred convolution ``y[k] = sum_j h[j] x[D*k + c - j]``, c = (len(h)-1)//2.

    With ``decimate=2`` only even output positions are kept.
    """
    if decimate not in (1, 2):
        raise ValueError("decimate must be 1 or 2")
    if decimate == 2 and n % 2:
        raise ValueError("decimation by 2 needs an even length; pad first")
    if len(taps) == 0:
        raise ValueError("empty tap list")
    return _fir_stage(int(n), tuple(float(t) for t in taps), extension, decimate)


def separable_filter_2d(x, row_taps, col_taps, extension="symmetric", decimate=1):
    """Filter each (H, W) plane along rows with ``row_taps`` and down columns
    with ``col_taps``.  An impulse maps to ``outer(col_taps, row_taps)``.
    """
    H, W = x.shape[-2:]
    y = fir_stage(W, row_taps, extension, decimate).apply(x, axis=-1)
    return fir_stage(H, col_taps, extension, decimate).apply(y, axis=-2)


def separable_filter_2d_adjoint(g, shape, row_taps, col_taps,
                                extension="symmetric", decimate=1):
    H, W = shape[-2:]
    y = fir_stage(H, col_taps, extension, decimate).adjoint(g, axis=-2)
    return fir_stage(W, row_taps, extension, decimate).adjoint(y, axis=-1)


@lru_cache(maxsize=64)
def upsample_stage(n):
    """Linear 2x interpolation, half-pixel centres, edges clamped.

    Output sample j sits at input coordinate j/2 - 1/4.
    """
    if n < 2:
        raise ValueError("need at least 2 samples to interpolate")
    j = np.arange(2 * n)
    src = j / 2.0 - 0.25
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    return Stage(np.stack([lo, hi], 1), np.stack([1.0 - frac, frac], 1), n)


def bilinear_upsample_2x(x):
    H, W = x.shape[-2:]
    y = upsample_stage(W).apply(x, axis=-1)
    return upsample_stage(H).apply(y, axis=-2)


def bilinear_upsample_2x_adjoint(g):
    H, W = g.shape[-2] // 2, g.shape[-1] // 2
    y = upsample_stage(H).adjoint(g, axis=-2)
    return upsample_stage(W).adjoint(y, axis=-1)


def _as_batches(t):
    """(..., C, H, W) -> (B, C, H*W) view plus the leading shape."""
    lead = t.shape[:-3]
    return t.reshape((-1,) + t.shape[-3:-2] + (t.shape[-2] * t.shape[-1],)), lead


# Plain matmul/tensordot rather than einsum(optimize=True): the latter picks
# its contraction order by iterating over sets, so results can differ in the
# last bit between processes, which breaks run-to-run reproducibility.

def channel_matmul(z, A):
    """y[..., f, h, w] = sum_q A[f, q] z[..., q, h, w] (a 1x1 convolution)."""
    A = np.asarray(A)
    if A.ndim != 2 or z.shape[-3] != A.shape[1]:
        raise ValueError(f"cannot mix {z.shape[-3]} channels with A of shape {A.shape}")
    zb, lead = _as_batches(z)
    return np.matmul(A, zb).reshape(lead + (A.shape[0],) + z.shape[-2:])


def channel_matmul_adjoint(g, z, A):
    """Returns (grad_z, grad_A) for y = channel_matmul(z, A)."""
    gb, lead = _as_batches(g)
    zb, _ = _as_batches(z)
    grad_z = np.matmul(A.T, gb).reshape(lead + z.shape[-3:])
    grad_A = np.tensordot(gb, zb, axes=([0, 2], [0, 2]))
    return grad_z, grad_A
