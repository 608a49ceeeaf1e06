"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def _operator(idx, w, n, dtype):
    K = idx.shape[0]
    M = np.zeros((K, n), dtype=np.float64)
    np.add.at(M, (np.arange(K)[:, None], idx), w)
    return M.astype(dtype, copy=False)


def gather_fir(x, idx, w):
    """y[p, k, q] = sum_j w[k, j] * x[p, idx[k, j], q]"""
    M = _operator(idx, w, x.shape[1], x.dtype)
    if x.shape[2] == 1:
        return (x[:, :, 0] @ M.T)[:, :, None]
    return np.matmul(M, x)


def scatter_fir(gy, idx, w, n):
    """Adjoint of gather_fir."""
    M = _operator(idx, w, n, gy.dtype)
    if gy.shape[2] == 1:
        return (gy[:, :, 0] @ M)[:, :, None]
    return np.matmul(M.T, gy)


def im2col(x, L, stride, pad):
    N, C, H, W = x.shape
    Ho = (H + 2 * pad - L) // stride + 1
    Wo = (W + 2 * pad - L) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((N, C, L, L, Ho, Wo), dtype=x.dtype)
    for di in range(L):
        for dj in range(L):
            cols[:, :, di, dj] = xp[:, :, di:di + stride * Ho:stride,
                                    dj:dj + stride * Wo:stride]
    return cols.reshape(N, C * L * L, Ho * Wo)


def col2im(cols, C, H, W, L, stride, pad):
    N = cols.shape[0]
    Ho = (H + 2 * pad - L) // stride + 1
    Wo = (W + 2 * pad - L) // stride + 1
    cols = cols.reshape(N, C, L, L, Ho, Wo)
    xp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for di in range(L):
        for dj in range(L):
            xp[:, :, di:di + stride * Ho:stride,
               dj:dj + stride * Wo:stride] += cols[:, :, di, dj]
    return xp[:, :, pad:pad + H, pad:pad + W]
