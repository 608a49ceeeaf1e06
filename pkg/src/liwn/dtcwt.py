"""2-D dual-tree complex wavelet transform: forward, inverse and adjoint.

Layout conventions
------------------
Level 1 filters with the odd-length biorthogonal pair without decimation.
The four trees are the four polyphase components of that undecimated
output: tree B is tree A delayed by one sample along each axis.  Levels >= 2
run the even-length quarter-shift pair on the interleaved tree image and
decimate by two.

The stored ``Pyramid.lowpass`` therefore keeps the four tree lowpasses
interleaved, with extent ``H / 2**(J-1)``; each 2x2 block holds one sample of
every tree.  ``Pyramid.decimated_lowpass()`` folds the trees into an
``H / 2**J`` image.

Each band level is a pair of real arrays ``(real, imag)`` of shape
``(..., 6, H/2**j, W/2**j)`` ordered 15, 45, 75, 105, 135, 165 degrees.
"""
import hashlib
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tensor import Stage, fir_stage, symmetric_index

ASSET_DIR = os.path.join(os.path.dirname(__file__), "assets")
ASSET_VERSION = 1

BIORT_KEYS = ("h0o", "g0o", "h1o", "g1o")
QSHIFT_KEYS = ("h0a", "h0b", "g0a", "g0b", "h1a", "h1b", "g1a", "g1b")

# band slots filled by each quadrant image: (z1 slot, z2 slot)
HORIZONTAL = (0, 5)
DIAGONAL = (1, 4)
VERTICAL = (2, 3)


class FilterConfigError(ValueError):
    """Missing, corrupt or inconsistent filter asset."""


@dataclass(frozen=True, eq=False)
class FilterSet:
    """Level-1 biorthogonal taps plus quarter-shift taps for deeper levels."""

    name: str
    level1: dict
    qshift: dict
    version: int = ASSET_VERSION

    def __getattr__(self, key):
        for table in ("level1", "qshift"):
            taps = self.__dict__.get(table, {})
            if key in taps:
                return taps[key]
        raise AttributeError(key)


@dataclass
class Pyramid:
    lowpass: np.ndarray
    real: list = field(default_factory=list)
    imag: list = field(default_factory=list)

    @property
    def J(self):
        return len(self.real)

    def decimated_lowpass(self):
        return fold_trees(self.lowpass)

    def copy(self):
        return Pyramid(self.lowpass.copy(), [r.copy() for r in self.real],
                       [i.copy() for i in self.imag])

    def arrays(self):
        return [self.lowpass, *self.real, *self.imag]

    def map(self, fn, other=None):
        if other is None:
            return Pyramid(fn(self.lowpass), [fn(r) for r in self.real],
                           [fn(i) for i in self.imag])
        return Pyramid(fn(self.lowpass, other.lowpass),
                       [fn(a, b) for a, b in zip(self.real, other.real)],
                       [fn(a, b) for a, b in zip(self.imag, other.imag)])

    def dot(self, other):
        return float(sum(np.vdot(a, b) for a, b in zip(self.arrays(), other.arrays())))

    def energy(self):
        return self.dot(self)


def fold_trees(lowpass):
    """Combine each 2x2 block of interleaved tree samples: (a + b + c + d) / 2."""
    return 0.5 * (lowpass[..., 0::2, 0::2] + lowpass[..., 0::2, 1::2]
                  + lowpass[..., 1::2, 0::2] + lowpass[..., 1::2, 1::2])


def fold_trees_adjoint(g):
    out = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)
    return 0.5 * out


# ---------------------------------------------------------------------------
# filter assets

def _parse_asset(path):
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FilterConfigError(f"cannot read filter asset {path}: {exc}") from exc
    if not lines or not lines[-1].startswith("checksum sha256 "):
        raise FilterConfigError(f"{path}: missing checksum line")
    body = "\n".join(lines[:-1]) + "\n"
    expected = lines[-1].split()[-1]
    if hashlib.sha256(body.encode()).hexdigest() != expected:
        raise FilterConfigError(f"{path}: checksum mismatch")
    meta, taps = {}, {}
    for line in lines[:-1]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] in ("version", "name", "kind"):
            meta[parts[0]] = parts[1]
            continue
        count = int(parts[1])
        values = np.array([float(v) for v in parts[2:]])
        if len(values) != count:
            raise FilterConfigError(f"{path}: {parts[0]} declares {count} taps, has {len(values)}")
        taps[parts[0]] = values
    if int(meta.get("version", -1)) != ASSET_VERSION:
        raise FilterConfigError(f"{path}: unsupported asset version {meta.get('version')}")
    return meta, taps


def load_filter_set(name, asset_path=None):
    """Load one filter family ("near_sym_a", "qshift_b", ...) from its asset file.

    Returns a dict of tap arrays plus ``name``/``kind``/``version`` entries.
    Raises :class:`FilterConfigError` for unknown names, corrupt files or
    taps that break the expected invariants.
    """
    path = asset_path or os.path.join(ASSET_DIR, f"{name}.txt")
    if asset_path is None and not os.path.exists(path):
        raise FilterConfigError(f"unknown filter set {name!r}")
    meta, taps = _parse_asset(path)
    if meta.get("name") != name:
        raise FilterConfigError(f"{path}: holds {meta.get('name')!r}, expected {name!r}")
    kind = meta.get("kind")
    tol = 1e-8
    if kind == "biort":
        missing = set(BIORT_KEYS) - set(taps)
        if missing:
            raise FilterConfigError(f"{path}: missing {sorted(missing)}")
        for k in BIORT_KEYS:
            if len(taps[k]) % 2 == 0:
                raise FilterConfigError(f"{name}: {k} must have odd length")
        # undecimated level 1: unit DC gain per axis
        if abs(taps["h0o"].sum() - 1) > tol or abs(taps["g0o"].sum() - 1) > tol:
            raise FilterConfigError(f"{name}: lowpass taps must sum to 1")
        if abs(taps["h1o"].sum()) > tol or abs(taps["g1o"].sum()) > tol:
            raise FilterConfigError(f"{name}: highpass taps must sum to 0")
    elif kind == "qshift":
        missing = set(QSHIFT_KEYS) - set(taps)
        if missing:
            raise FilterConfigError(f"{path}: missing {sorted(missing)}")
        for k in QSHIFT_KEYS:
            if len(taps[k]) % 2:
                raise FilterConfigError(f"{name}: {k} must have even length")
        for a, b in (("h0a", "h0b"), ("h1a", "h1b"), ("g0a", "g0b"), ("g1a", "g1b")):
            if not np.allclose(taps[b], taps[a][::-1], atol=tol, rtol=0):
                raise FilterConfigError(f"{name}: {b} is not the reverse of {a}")
        s2 = np.sqrt(2.0)
        if abs(taps["h0a"].sum() - s2) > tol or abs(taps["g0a"].sum() - s2) > tol:
            raise FilterConfigError(f"{name}: q-shift lowpass taps must sum to sqrt(2)")
        # the published q-shift highpass taps are rounded: zero sum only to ~1e-6
        if abs(taps["h1a"].sum()) > 1e-6 or abs(taps["g1a"].sum()) > 1e-6:
            raise FilterConfigError(f"{name}: q-shift highpass taps must sum to 0")
    else:
        raise FilterConfigError(f"{path}: unknown kind {kind!r}")
    taps.update(name=name, kind=kind, version=int(meta["version"]))
    return taps


@lru_cache(maxsize=8)
def get_filters(biort="near_sym_a", qshift="qshift_a"):
    """The FilterSet used by the transforms; cached per name pair."""
    b = load_filter_set(biort)
    q = load_filter_set(qshift)
    if b["kind"] != "biort" or q["kind"] != "qshift":
        raise FilterConfigError(f"expected (biort, qshift) pair, got ({biort}, {qshift})")
    level1 = {k: b[k] for k in BIORT_KEYS}
    qs = {k: q[k] for k in QSHIFT_KEYS}
    return FilterSet(name=f"{biort}+{qshift}", level1=level1, qshift=qs)


SHIPPED_FILTER_SETS = (("near_sym_a", "qshift_a"), ("near_sym_b", "qshift_b"))


# ---------------------------------------------------------------------------
# 1-D stages for levels >= 2

def _ext(pos, n):
    return symmetric_index(pos, n)


@lru_cache(maxsize=256)
def _qshift_down(n, ha, hb):
    """Decimating two-tree filter: ``ha`` on the even-sample tree, ``hb`` on the odd.

    Output positions alternate between the trees; which tree lands on the even
    outputs follows the sign of <ha, hb> so the interleaving stays consistent
    across levels.
    """
    if n % 4:
        raise ValueError(f"q-shift level needs a length divisible by 4, got {n}")
    ha, hb = np.array(ha), np.array(hb)
    m = len(ha)
    k = np.arange(n // 4)[:, None]
    t = np.arange(m)[None, :]
    idx_a = _ext(4 * k + m - 2 * t, n)
    idx_b = _ext(4 * k + m + 1 - 2 * t, n)
    idx = np.empty((n // 2, m), dtype=np.intp)
    w = np.empty((n // 2, m))
    a_first = np.dot(ha, hb) > 0
    sa, sb = (slice(0, None, 2), slice(1, None, 2)) if a_first else (slice(1, None, 2), slice(0, None, 2))
    idx[sa], w[sa] = idx_a, np.broadcast_to(ha, idx_a.shape)
    idx[sb], w[sb] = idx_b, np.broadcast_to(hb, idx_b.shape)
    return Stage(idx, w, n)


@lru_cache(maxsize=256)
def _qshift_up(n, ha, hb):
    """Interpolating synthesis counterpart of :func:`_qshift_down` (length n -> 2n)."""
    if n % 2:
        raise ValueError(f"q-shift synthesis needs an even length, got {n}")
    ha, hb = np.array(ha), np.array(hb)
    m = len(ha)
    m2 = m // 2
    if np.dot(ha, hb) > 0:
        da, db = 0, 1
    else:
        da, db = 1, 0
    k = np.arange(n // 2)[:, None]
    j = np.arange(m2)[None, :]
    rows = []
    if m2 % 2:
        rows.append((_ext(2 * k + m2 - 2 * j - db, n), ha[0::2]))
        rows.append((_ext(2 * k + m2 - 2 * j - da, n), hb[0::2]))
        rows.append((_ext(2 * k + m2 - 2 * j - db, n), ha[1::2]))
        rows.append((_ext(2 * k + m2 - 2 * j - da, n), hb[1::2]))
    else:
        rows.append((_ext(2 * k + m2 - 1 - 2 * j - db, n), ha[1::2]))
        rows.append((_ext(2 * k + m2 - 1 - 2 * j - da, n), hb[1::2]))
        rows.append((_ext(2 * k + m2 + 1 - 2 * j - db, n), ha[0::2]))
        rows.append((_ext(2 * k + m2 + 1 - 2 * j - da, n), hb[0::2]))
    idx = np.empty((2 * n, m2), dtype=np.intp)
    w = np.empty((2 * n, m2))
    for r, (ii, taps) in enumerate(rows):
        idx[r::4] = ii
        w[r::4] = np.broadcast_to(taps, ii.shape)
    return Stage(idx, w, n)


def _t(a):
    return tuple(float(v) for v in a)


def _level1_stages(n, f, synthesis):
    if synthesis:
        return fir_stage(n, f.g0o), fir_stage(n, f.g1o)
    return fir_stage(n, f.h0o), fir_stage(n, f.h1o)


def _qshift_stages(n, f, synthesis):
    if synthesis:
        return _qshift_up(n, _t(f.g0b), _t(f.g0a)), _qshift_up(n, _t(f.g1b), _t(f.g1a))
    return _qshift_down(n, _t(f.h0b), _t(f.h0a)), _qshift_down(n, _t(f.h1b), _t(f.h1a))


# ---------------------------------------------------------------------------
# quadrant <-> complex

_S = np.sqrt(0.5)


def q2c(y):
    """Interleaved quadrant image -> (real, imag) of the two complex bands.

    With p, q, r, s the samples at (even, even), (even, odd), (odd, even),
    (odd, odd): z1 = ((p - s) + i (q + r)) / sqrt 2, z2 = ((p + s) + i (q - r)) / sqrt 2.
    The map is orthogonal.
    """
    p = y[..., 0::2, 0::2]
    q = y[..., 0::2, 1::2]
    r = y[..., 1::2, 0::2]
    s = y[..., 1::2, 1::2]
    re = np.stack([(p - s) * _S, (p + s) * _S], axis=-3)
    im = np.stack([(q + r) * _S, (q - r) * _S], axis=-3)
    return re, im


def c2q(re, im):
    """Inverse (and adjoint) of :func:`q2c`."""
    r1, r2 = re[..., 0, :, :], re[..., 1, :, :]
    i1, i2 = im[..., 0, :, :], im[..., 1, :, :]
    h, w = r1.shape[-2:]
    y = np.empty(r1.shape[:-2] + (2 * h, 2 * w), dtype=np.result_type(re, im))
    y[..., 0::2, 0::2] = (r1 + r2) * _S
    y[..., 1::2, 1::2] = (r2 - r1) * _S
    y[..., 0::2, 1::2] = (i1 + i2) * _S
    y[..., 1::2, 0::2] = (i1 - i2) * _S
    return y


def _place(re_out, im_out, slots, re, im):
    re_out[..., slots[0], :, :] = re[..., 0, :, :]
    re_out[..., slots[1], :, :] = re[..., 1, :, :]
    im_out[..., slots[0], :, :] = im[..., 0, :, :]
    im_out[..., slots[1], :, :] = im[..., 1, :, :]


def _take(re, im, slots):
    idx = list(slots)
    return re[..., idx, :, :], im[..., idx, :, :]


# ---------------------------------------------------------------------------
# transforms

def _analysis_level(lolo, col_lo, col_hi, row_lo, row_hi):
    lo = col_lo.apply(lolo, axis=-2)
    hi = col_hi.apply(lolo, axis=-2)
    new_lolo = row_lo.apply(lo, axis=-1)
    h, w = new_lolo.shape[-2] // 2, new_lolo.shape[-1] // 2
    shape = lolo.shape[:-2] + (6, h, w)
    re = np.empty(shape, dtype=lolo.dtype)
    im = np.empty(shape, dtype=lolo.dtype)
    _place(re, im, HORIZONTAL, *q2c(row_lo.apply(hi, axis=-1)))
    _place(re, im, VERTICAL, *q2c(row_hi.apply(lo, axis=-1)))
    _place(re, im, DIAGONAL, *q2c(row_hi.apply(hi, axis=-1)))
    return new_lolo, re, im


def bandpass_level(lolo, filters, level):
    """One analysis level applied to an interleaved lowpass image.

    ``level == 1`` uses the biorthogonal pair without decimation; deeper
    levels use the q-shift pair.  Returns ``(lowpass, real, imag)``.
    """
    H, W = lolo.shape[-2:]
    if level == 1:
        col_lo, col_hi = _level1_stages(H, filters, False)
        row_lo, row_hi = _level1_stages(W, filters, False)
    else:
        col_lo, col_hi = _qshift_stages(H, filters, False)
        row_lo, row_hi = _qshift_stages(W, filters, False)
    return _analysis_level(lolo, col_lo, col_hi, row_lo, row_hi)


def _check_input(x, J):
    if J < 1:
        raise ValueError("J must be >= 1")
    H, W = x.shape[-2:]
    if H % (2 ** J) or W % (2 ** J):
        raise ValueError(f"image extents {H}x{W} must be divisible by 2**J = {2 ** J}")


def dtcwt_forward(x, J=1, filters=None):
    """Forward DTCWT of a (..., H, W) array; H and W divisible by ``2**J``."""
    filters = filters or get_filters()
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    _check_input(x, J)
    pyr = Pyramid(lowpass=None)
    lolo = x
    for level in range(1, J + 1):
        lolo, re, im = bandpass_level(lolo, filters, level)
        pyr.real.append(re)
        pyr.imag.append(im)
    pyr.lowpass = lolo
    return pyr


def _check_pyramid(pyr):
    J = pyr.J
    if J < 1 or len(pyr.imag) != J:
        raise ValueError("pyramid needs matching real/imag band lists")
    for j in range(J):
        if pyr.real[j].shape != pyr.imag[j].shape or pyr.real[j].shape[-3] != 6:
            raise ValueError(f"level {j + 1}: malformed band arrays")
    h = pyr.real[-1].shape[-1] * 2
    if pyr.lowpass.shape[-1] != h:
        raise ValueError("lowpass extent does not match the coarsest band level")


def _synthesis(pyr, filters, adjoint):
    """Shared backward sweep: synthesis filters for the inverse, transposed
    analysis stages for the adjoint."""
    _check_pyramid(pyr)
    lolo = pyr.lowpass
    for level in range(pyr.J, 0, -1):
        re, im = pyr.real[level - 1], pyr.imag[level - 1]
        h2, w2 = re.shape[-2] * 2, re.shape[-1] * 2
        if level == 1:
            H, W = h2, w2
            stages = (_level1_stages(H, filters, not adjoint), _level1_stages(W, filters, not adjoint))
        else:
            H, W = h2 * 2, w2 * 2
            stages = (_qshift_stages(H if adjoint else h2, filters, not adjoint),
                      _qshift_stages(W if adjoint else w2, filters, not adjoint))
        (col_lo, col_hi), (row_lo, row_hi) = stages
        go = (lambda s, a, ax: s.adjoint(a, axis=ax)) if adjoint else (lambda s, a, ax: s.apply(a, axis=ax))
        if lolo.shape[-2:] != (h2, w2):
            raise ValueError(f"level {level}: lowpass {lolo.shape[-2:]} does not fit bands {re.shape[-2:]}")
        horiz = c2q(*_take(re, im, HORIZONTAL))
        vert = c2q(*_take(re, im, VERTICAL))
        diag = c2q(*_take(re, im, DIAGONAL))
        lo = go(row_lo, lolo, -1) + go(row_hi, vert, -1)
        hi = go(row_lo, horiz, -1) + go(row_hi, diag, -1)
        lolo = go(col_lo, lo, -2) + go(col_hi, hi, -2)
    return lolo


def dtcwt_inverse(pyr, filters=None):
    """Reconstruct the image from a pyramid made with the same filters."""
    return _synthesis(pyr, filters or get_filters(), adjoint=False)


def dtcwt_adjoint(pyr, filters=None):
    """Exact transpose of :func:`dtcwt_forward` (not its inverse)."""
    return _synthesis(pyr, filters or get_filters(), adjoint=True)


def zeros_like_pyramid(x_shape, J, dtype=np.float64):
    *lead, H, W = x_shape
    lead = tuple(lead)
    pyr = Pyramid(np.zeros(lead + (H >> (J - 1), W >> (J - 1)), dtype=dtype))
    for j in range(1, J + 1):
        shape = lead + (6, H >> j, W >> j)
        pyr.real.append(np.zeros(shape, dtype=dtype))
        pyr.imag.append(np.zeros(shape, dtype=dtype))
    return pyr
