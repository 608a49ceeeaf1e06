# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled inner loops.

Every routine here has a pure-numpy twin in :mod:`liwn._kernels_py` with an
identical signature; :mod:`liwn.kernels` picks one at import time.

The FIR routines act on the middle axis of a (P, n, Q) array, which is a free
reshape of a C-contiguous array around any axis.  For Q > 1 the innermost
loop is a contiguous multiply-add over Q.  For Q == 1 (filtering along the
last axis) tiles of rows are transposed into a scratch buffer first so the
same contiguous inner loop applies.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.stdlib cimport malloc, free
from libc.string cimport memset, memcpy

cnp.import_array()

DEF TILE = 64


cdef inline void _gather_block(const floating* xb, floating* yb, Py_ssize_t Q,
                               const cnp.intp_t* idx, const floating* w,
                               Py_ssize_t K, Py_ssize_t M) noexcept nogil:
    # yb[k, q] = sum_j w[k, j] * xb[idx[k, j], q]; xb is (n, Q), yb is (K, Q)
    cdef Py_ssize_t k, j, q
    cdef floating c
    cdef const floating* src
    cdef floating* dst
    for k in range(K):
        dst = yb + k * Q
        for q in range(Q):
            dst[q] = 0
        for j in range(M):
            c = w[k * M + j]
            src = xb + idx[k * M + j] * Q
            for q in range(Q):
                dst[q] += c * src[q]


cdef inline void _scatter_block(const floating* gyb, floating* gxb, Py_ssize_t Q,
                                const cnp.intp_t* idx, const floating* w,
                                Py_ssize_t K, Py_ssize_t M) noexcept nogil:
    # gxb[idx[k, j], q] += w[k, j] * gyb[k, q]; gxb must start zeroed
    cdef Py_ssize_t k, j, q
    cdef floating c
    cdef const floating* src
    cdef floating* dst
    for k in range(K):
        src = gyb + k * Q
        for j in range(M):
            c = w[k * M + j]
            dst = gxb + idx[k * M + j] * Q
            for q in range(Q):
                dst[q] += c * src[q]


def gather_fir(floating[:, :, ::1] x, const cnp.intp_t[:, ::1] idx, w_in):
    """y[p, k, q] = sum_j w[k, j] * x[p, idx[k, j], q]"""
    cdef Py_ssize_t P = x.shape[0], n = x.shape[1], Q = x.shape[2]
    cdef Py_ssize_t K = idx.shape[0], M = idx.shape[1]
    cdef Py_ssize_t p, t, i, r, rows
    dtype = np.float32 if floating is float else np.float64
    cdef floating[:, ::1] w = np.ascontiguousarray(w_in, dtype=dtype)
    out = np.empty((P, K, Q), dtype=dtype)
    cdef floating[:, :, ::1] y = out
    cdef floating* xt
    cdef floating* yt
    if P == 0 or K == 0 or Q == 0:
        return out
    with nogil:
        if Q > 1:
            for p in range(P):
                _gather_block(&x[p, 0, 0], &y[p, 0, 0], Q, &idx[0, 0], &w[0, 0], K, M)
        else:
            # transpose TILE rows at a time: xt is (n, TILE), yt is (K, TILE)
            xt = <floating*> malloc(n * TILE * sizeof(floating))
            yt = <floating*> malloc(K * TILE * sizeof(floating))
            for t in range(0, P, TILE):
                rows = min(TILE, P - t)
                for r in range(rows):
                    for i in range(n):
                        xt[i * rows + r] = x[t + r, i, 0]
                _gather_block(xt, yt, rows, &idx[0, 0], &w[0, 0], K, M)
                for r in range(rows):
                    for i in range(K):
                        y[t + r, i, 0] = yt[i * rows + r]
            free(xt)
            free(yt)
    return out


def scatter_fir(floating[:, :, ::1] gy, const cnp.intp_t[:, ::1] idx, w_in, Py_ssize_t n):
    """Adjoint of gather_fir: gx[p, idx[k, j], q] += w[k, j] * gy[p, k, q]."""
    cdef Py_ssize_t P = gy.shape[0], K = gy.shape[1], Q = gy.shape[2]
    cdef Py_ssize_t M = idx.shape[1]
    cdef Py_ssize_t p, t, i, r, rows
    dtype = np.float32 if floating is float else np.float64
    cdef floating[:, ::1] w = np.ascontiguousarray(w_in, dtype=dtype)
    out = np.zeros((P, n, Q), dtype=dtype)
    cdef floating[:, :, ::1] gx = out
    cdef floating* gt
    cdef floating* xt
    if P == 0 or K == 0 or Q == 0 or M == 0:
        return out
    with nogil:
        if Q > 1:
            for p in range(P):
                _scatter_block(&gy[p, 0, 0], &gx[p, 0, 0], Q, &idx[0, 0], &w[0, 0], K, M)
        else:
            gt = <floating*> malloc(K * TILE * sizeof(floating))
            xt = <floating*> malloc(n * TILE * sizeof(floating))
            for t in range(0, P, TILE):
                rows = min(TILE, P - t)
                for r in range(rows):
                    for i in range(K):
                        gt[i * rows + r] = gy[t + r, i, 0]
                memset(xt, 0, n * rows * sizeof(floating))
                _scatter_block(gt, xt, rows, &idx[0, 0], &w[0, 0], K, M)
                for r in range(rows):
                    for i in range(n):
                        gx[t + r, i, 0] = xt[i * rows + r]
            free(gt)
            free(xt)
    return out


def im2col(floating[:, :, :, ::1] x, int L, int stride, int pad):
    """Patches of an (N, C, H, W) batch as an (N, C*L*L, Ho*Wo) array."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - L) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - L) // stride + 1
    cdef Py_ssize_t n, c, di, dj, i, j, r, row, jlo, jhi
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((N, C * L * L, Ho * Wo), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for n in range(N):
            for c in range(C):
                for di in range(L):
                    for dj in range(L):
                        row = (c * L + di) * L + dj
                        # output columns j with 0 <= j*stride + dj - pad < W
                        jlo = max(0, (pad - dj + stride - 1) // stride)
                        jhi = W - 1 + pad - dj
                        jhi = min(Wo, jhi // stride + 1) if jhi >= 0 else 0
                        for i in range(Ho):
                            r = i * stride + di - pad
                            if r < 0 or r >= H or jhi <= jlo:
                                continue
                            dst = &cols[n, row, i * Wo]
                            src = &x[n, c, r, 0]
                            if stride == 1:
                                memcpy(dst + jlo, src + jlo + dj - pad,
                                       (jhi - jlo) * sizeof(floating))
                            else:
                                for j in range(jlo, jhi):
                                    dst[j] = src[j * stride + dj - pad]
    return out


def col2im(floating[:, :, ::1] cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int L, int stride, int pad):
    """Adjoint of im2col."""
    cdef Py_ssize_t N = cols.shape[0]
    cdef Py_ssize_t Ho = (H + 2 * pad - L) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - L) // stride + 1
    cdef Py_ssize_t n, c, di, dj, i, j, r, row, jlo, jhi
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((N, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] x = out
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for n in range(N):
            for c in range(C):
                for di in range(L):
                    for dj in range(L):
                        row = (c * L + di) * L + dj
                        jlo = max(0, (pad - dj + stride - 1) // stride)
                        jhi = W - 1 + pad - dj
                        jhi = min(Wo, jhi // stride + 1) if jhi >= 0 else 0
                        for i in range(Ho):
                            r = i * stride + di - pad
                            if r < 0 or r >= H:
                                continue
                            src = &cols[n, row, i * Wo]
                            dst = &x[n, c, r, 0]
                            for j in range(jlo, jhi):
                                dst[j * stride + dj - pad] += src[j]
    return out
