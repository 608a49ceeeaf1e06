"""Fixed scattering machinery: wavelet modulus propagator, order-2 scattering,
and the deformation-stability probe.

Channel layout
--------------
One propagator stage maps ``C`` channels to ``7C``, grouped per input channel:
output channel ``7c + g`` holds the lowpass for ``g == 0`` and the modulus of
oriented band ``g - 1`` otherwise.  Two stages therefore put path
``(g1, g2)`` of input channel ``c`` at ``49c + 7 g1 + g2``.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import dtcwt as _dt
from .dtcwt import Pyramid, fold_trees, fold_trees_adjoint, get_filters
from .tensor import symmetric_index

K_ORIENT = 6
GAMMA = K_ORIENT + 1
ORIENTATIONS_DEG = (15, 45, 75, 105, 135, 165)

# gradient of |z| is taken as zero below this magnitude
MAG_EPS = 1e-12


def modulus(re, im, floor=0.0):
    if floor > 0:
        return np.sqrt(re * re + im * im + floor * floor) - floor
    return np.sqrt(re * re + im * im)


def modulus_backward(g, re, im, floor=0.0):
    if floor > 0:
        denom = np.sqrt(re * re + im * im + floor * floor)
        return g * re / denom, g * im / denom
    mag = np.sqrt(re * re + im * im)
    safe = np.where(mag < MAG_EPS, np.inf, mag)
    return g * re / safe, g * im / safe


@dataclass
class PropagatorCache:
    pyramid: Pyramid
    in_shape: tuple
    floor: float
    filters: object


def propagate(x, filters=None, floor=0.0):
    """Wavelet modulus propagator with its cache for :func:`propagate_backward`."""
    filters = filters or get_filters()
    x = np.asarray(x)
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise ValueError(f"propagator needs even extents, got {H}x{W}")
    if x.ndim < 3:
        raise ValueError("expected (..., C, H, W)")
    pyr = _dt.dtcwt_forward(x, 1, filters)
    lp = fold_trees(pyr.lowpass)
    mag = modulus(pyr.real[0], pyr.imag[0], floor)
    z = np.concatenate([lp[..., None, :, :], mag], axis=-3)
    C = x.shape[-3]
    z = z.reshape(x.shape[:-3] + (GAMMA * C,) + z.shape[-2:])
    return z, PropagatorCache(pyr, x.shape, floor, filters)


def propagate_backward(grad_z, cache):
    *lead, C, H, W = cache.in_shape
    g = grad_z.reshape(tuple(lead) + (C, GAMMA, H // 2, W // 2))
    pyr = cache.pyramid
    g_re, g_im = modulus_backward(g[..., 1:, :, :], pyr.real[0], pyr.imag[0], cache.floor)
    grad_pyr = Pyramid(fold_trees_adjoint(g[..., 0, :, :]), [g_re], [g_im])
    return _dt.dtcwt_adjoint(grad_pyr, cache.filters)


def wavelet_modulus_propagator(x, filters=None, floor=0.0):
    """``(..., C, H, W) -> (..., 7C, H/2, W/2)``: lowpass then six band moduli per channel."""
    return propagate(x, filters, floor)[0]


@dataclass(frozen=True)
class LayoutEntry:
    channel: int          # input channel c
    gammas: tuple         # (g1, ..., gm), 0 = lowpass step, k = band k-1
    start: int
    stop: int

    @property
    def kind(self):
        g = self.gammas
        if all(v == 0 for v in g):
            return "S0"
        if len(g) == 1:
            return "U1"
        if g[0] == 0:
            return "U1(phi)"   # bands of the lowpass path
        if g[1] == 0:
            return "S1"
        return "U2"

    @property
    def path(self):
        """Wavelet indices (lambda_1, ...) with orientation in degrees."""
        return tuple(ORIENTATIONS_DEG[v - 1] for v in self.gammas if v)


@dataclass
class ScatterLayout:
    order: int
    input_channels: int
    entries: list = field(default_factory=list)

    @classmethod
    def build(cls, C, order):
        layout = cls(order, C)
        width = GAMMA ** order
        for c in range(C):
            for gammas in product(range(GAMMA), repeat=order):
                off = 0
                for v in gammas:
                    off = off * GAMMA + v
                start = c * width + off
                layout.entries.append(LayoutEntry(c, gammas, start, start + 1))
        return layout

    @property
    def total_channels(self):
        return self.input_channels * GAMMA ** self.order

    def channels(self, kind=None, channel=None):
        return np.array([e.start for e in self.entries
                         if (kind is None or e.kind == kind)
                         and (channel is None or e.channel == channel)], dtype=np.intp)

    def counts(self):
        out = {}
        for e in self.entries:
            out[e.kind] = out.get(e.kind, 0) + (e.stop - e.start)
        return out


def scatter_order1(x, filters=None):
    z = wavelet_modulus_propagator(x, filters)
    return z, ScatterLayout.build(x.shape[-3], 1)


def scatter_order2(x, filters=None):
    """Two propagator stages: ``(..., C, H, W) -> (..., 49C, H/4, W/4)``."""
    H, W = x.shape[-2:]
    if H % 4 or W % 4:
        raise ValueError(f"order-2 scattering needs extents divisible by 4, got {H}x{W}")
    z = wavelet_modulus_propagator(wavelet_modulus_propagator(x, filters), filters)
    return z, ScatterLayout.build(x.shape[-3], 2)


def scatter(x, order=2, filters=None):
    if order == 1:
        return scatter_order1(x, filters)[0]
    if order == 2:
        return scatter_order2(x, filters)[0]
    raise ValueError("order must be 1 or 2")


def scatter_distance(x1, x2, filters=None, order=2):
    if np.shape(x1) != np.shape(x2):
        raise ValueError("inputs must have the same shape")
    return float(np.linalg.norm(scatter(x1, order, filters) - scatter(x2, order, filters)))


# ---------------------------------------------------------------------------
# deformations

@dataclass
class StabilityProbe:
    """Displacement field ``tau`` of shape (2, H, W) in pixels (rows, cols)."""

    tau: np.ndarray

    @property
    def max_grad(self):
        """sup over pixels of the spectral norm of the Jacobian of tau."""
        dy = np.gradient(self.tau[0], axis=(0, 1))
        dx = np.gradient(self.tau[1], axis=(0, 1))
        jac = np.stack([np.stack(dy, -1), np.stack(dx, -1)], -2)
        return float(np.linalg.norm(jac, ord=2, axis=(-2, -1)).max())

    @property
    def max_displacement(self):
        return float(np.sqrt((self.tau ** 2).sum(0)).max())


class PreconditionError(ValueError):
    pass


def warp_image(x, probe):
    """Bilinear resampling of ``x`` at ``u - tau(u)`` with symmetric boundaries."""
    if probe.max_grad > 0.5 + 1e-12:
        raise PreconditionError(f"|grad tau| = {probe.max_grad:.3f} exceeds 1/2")
    H, W = x.shape[-2:]
    if probe.tau.shape != (2, H, W):
        raise ValueError(f"tau must have shape (2, {H}, {W})")
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    sy = ii - probe.tau[0]
    sx = jj - probe.tau[1]
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    fy, fx = sy - y0, sx - x0
    ya, yb = symmetric_index(y0, H), symmetric_index(y0 + 1, H)
    xa, xb = symmetric_index(x0, W), symmetric_index(x0 + 1, W)
    return ((1 - fy) * (1 - fx) * x[..., ya, xa] + (1 - fy) * fx * x[..., ya, xb]
            + fy * (1 - fx) * x[..., yb, xa] + fy * fx * x[..., yb, xb])


def shift_image(x, dy, dx=0):
    """Integer translation with symmetric extension at the borders."""
    tau = np.zeros((2,) + x.shape[-2:])
    tau[0], tau[1] = dy, dx
    return warp_image(x, StabilityProbe(tau))


def smooth_displacement(shape, seed, smoothness=4.0):
    """Random smooth unit-sup displacement field and its sup-gradient.

    Scale it by ``a`` to get ``||tau||_inf = a`` and ``||grad tau||_inf = a * grad``.
    """
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    field_ = rng.standard_normal((2,) + tuple(shape))
    field_ = np.stack([gaussian_filter(f, smoothness, mode="wrap") for f in field_])
    field_ /= np.sqrt((field_ ** 2).sum(0)).max()
    return field_, StabilityProbe(field_).max_grad


def relative_distance(fx, fy):
    return float(np.linalg.norm(fx - fy) / np.linalg.norm(fy))


def shift_ratio(x, shift, order, filters=None):
    """(relative scattering change) / (relative pixel change) under a vertical shift."""
    xs = shift_image(x, shift)
    pix = relative_distance(xs, x)
    sc = relative_distance(scatter(xs, order, filters), scatter(x, order, filters))
    return sc / pix


def warp_curve(x, amplitudes, seed, max_grad=0.25, order=2, filters=None):
    """Scattering and pixel distance ratios of ``x`` warped by a scaled smooth field.

    Amplitudes whose field would exceed ``max_grad`` are rejected.
    """
    field_, g = smooth_displacement(x.shape[-2:], seed)
    rows = []
    sx = scatter(x, order, filters)
    nx = np.linalg.norm(x)
    for a in amplitudes:
        if a * g > max_grad + 1e-12:
            raise PreconditionError(f"amplitude {a} gives |grad tau| = {a * g:.3f} > {max_grad}")
        xw = warp_image(x, StabilityProbe(a * field_))
        rows.append((a, float(np.linalg.norm(scatter(xw, order, filters) - sx) / nx),
                     float(np.linalg.norm(xw - x) / nx)))
    return rows, g
