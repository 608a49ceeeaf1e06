"""Backend selection for the hot loops.

The compiled Cython module is used when it imports; otherwise (or when the
environment variable ``LIWN_BACKEND=python`` is set) the numpy versions are
used.  Both expose ``gather_fir``, ``scatter_fir``, ``im2col`` and ``col2im``
with the same signatures and contiguity requirements; the FIR routines
filter the middle axis of a (P, n, Q) array.
"""
import logging
import os

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("LIWN_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        log.info("compiled kernels unavailable, using numpy fallback")

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def use_backend(name):
    """Switch backend at runtime ("cython" or "python"). Returns the old name."""
    global _impl, BACKEND
    old = BACKEND
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _impl = _compiled
    elif name == "python":
        _impl = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return old


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def _float(a):
    a = np.ascontiguousarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


def gather_fir(x, idx, w):
    return _impl.gather_fir(_float(x), idx, w)


def scatter_fir(gy, idx, w, n):
    return _impl.scatter_fir(_float(gy), idx, w, n)


def im2col(x, L, stride, pad):
    return _impl.im2col(_float(x), L, stride, pad)


def col2im(cols, C, H, W, L, stride, pad):
    return _impl.col2im(_float(cols), C, H, W, L, stride, pad)
