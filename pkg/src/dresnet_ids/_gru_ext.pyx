# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence kernels.

Same contract as :mod:`dresnet_ids._gru_py`. The per-step matrix products go
straight to BLAS and the elementwise gate algebra runs in fused C loops; only
the tanh passes of the forward step call back into numpy.
"""
import numpy as np

from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm


cdef inline void _gemm(char transa, char transb, int m, int n, int k, double alpha,
                       double* a, int lda, double* b, int ldb, double beta,
                       double* c, int ldc) noexcept nogil:
    # row-major C = alpha * op(A) @ op(B) + beta * C, via the column-major
    # identity C^T = op(B)^T @ op(A)^T
    dgemm(&transb, &transa, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def gru_scan(const double[:, :, ::1] xw, const double[:, ::1] u, const double[:, ::1] h0):
    cdef Py_ssize_t L = xw.shape[0], N = xw.shape[1], H3 = xw.shape[2]
    cdef Py_ssize_t H = H3 // 3
    hs_arr = np.empty((L, N, H))
    zs_arr = np.empty((L, N, H))
    rs_arr = np.empty((L, N, H))
    hcs_arr = np.empty((L, N, H))
    a_arr = np.empty((N, H3))
    # libm tanh per element is several times slower than numpy's vectorized
    # ufunc, so the gate nonlinearities go through numpy on these views
    gates = a_arr[:, : 2 * H]
    cand = a_arr[:, 2 * H :]
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] zs = zs_arr
    cdef double[:, :, ::1] rs = rs_arr
    cdef double[:, :, ::1] hcs = hcs_arr
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] rh = np.empty((N, H))
    cdef double* hp
    cdef double* up = <double*>&u[0, 0]
    cdef Py_ssize_t t, i, j
    cdef double z, r, hprev
    if L == 0 or N == 0 or H == 0:
        return hs_arr, zs_arr, rs_arr, hcs_arr
    for t in range(L):
        hp = <double*>&h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
        with nogil:
            memcpy(&a[0, 0], &xw[t, 0, 0], N * H3 * sizeof(double))
            _gemm(b'N', b'N', <int>N, <int>(2 * H), <int>H, 1.0, hp, <int>H,
                  up, <int>H3, 1.0, &a[0, 0], <int>H3)
        # sigmoid(a) = (tanh(a / 2) + 1) / 2
        np.multiply(gates, 0.5, out=gates)
        np.tanh(gates, out=gates)
        with nogil:
            for i in range(N):
                for j in range(H):
                    z = 0.5 * (a[i, j] + 1.0)
                    r = 0.5 * (a[i, H + j] + 1.0)
                    zs[t, i, j] = z
                    rs[t, i, j] = r
                    rh[i, j] = r * hp[i * H + j]
            _gemm(b'N', b'N', <int>N, <int>H, <int>H, 1.0, &rh[0, 0], <int>H,
                  up + 2 * H, <int>H3, 1.0, &a[0, 2 * H], <int>H3)
        np.tanh(cand, out=hcs_arr[t])
        with nogil:
            for i in range(N):
                for j in range(H):
                    hprev = hp[i * H + j]
                    hs[t, i, j] = hprev + zs[t, i, j] * (hcs[t, i, j] - hprev)
    return hs_arr, zs_arr, rs_arr, hcs_arr


def gru_scan_backward(const double[:, :, ::1] dhs, const double[:, ::1] u,
                      const double[:, ::1] h0, const double[:, :, ::1] hs,
                      const double[:, :, ::1] zs, const double[:, :, ::1] rs,
                      const double[:, :, ::1] hcs):
    cdef Py_ssize_t L = hs.shape[0], N = hs.shape[1], H = hs.shape[2]
    cdef Py_ssize_t H3 = 3 * H
    dxw_arr = np.empty((L, N, H3))
    du_arr = np.zeros((H, H3))
    dh_arr = np.zeros((N, H))
    cdef double[:, :, ::1] dxw = dxw_arr
    cdef double[:, ::1] du = du_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] ndh = np.empty((N, H))
    cdef double[:, ::1] drh = np.empty((N, H))
    cdef double[:, ::1] rh = np.empty((N, H))
    cdef double* hp
    cdef double* up = <double*>&u[0, 0]
    cdef Py_ssize_t t, i, j
    cdef double g, z, r, hc, hprev
    if L == 0 or N == 0 or H == 0:
        return dxw_arr, du_arr, dh_arr
    with nogil:
        for t in range(L - 1, -1, -1):
            hp = <double*>&h0[0, 0] if t == 0 else <double*>&hs[t - 1, 0, 0]
            for i in range(N):
                for j in range(H):
                    g = dh[i, j] + dhs[t, i, j]
                    dh[i, j] = g
                    z = zs[t, i, j]
                    hc = hcs[t, i, j]
                    hprev = hp[i * H + j]
                    dxw[t, i, j] = g * (hc - hprev) * z * (1.0 - z)
                    dxw[t, i, 2 * H + j] = g * z * (1.0 - hc * hc)
                    rh[i, j] = rs[t, i, j] * hprev
            # drh = dah @ Uh^T
            _gemm(b'N', b'T', <int>N, <int>H, <int>H, 1.0, &dxw[t, 0, 2 * H], <int>H3,
                  up + 2 * H, <int>H3, 0.0, &drh[0, 0], <int>H)
            for i in range(N):
                for j in range(H):
                    r = rs[t, i, j]
                    hprev = hp[i * H + j]
                    dxw[t, i, H + j] = drh[i, j] * hprev * r * (1.0 - r)
                    ndh[i, j] = dh[i, j] * (1.0 - zs[t, i, j]) + drh[i, j] * r
            _gemm(b'T', b'N', <int>H, <int>H, <int>N, 1.0, &rh[0, 0], <int>H,
                  &dxw[t, 0, 2 * H], <int>H3, 1.0, &du[0, 2 * H], <int>H3)
            _gemm(b'T', b'N', <int>H, <int>(2 * H), <int>N, 1.0, hp, <int>H,
                  &dxw[t, 0, 0], <int>H3, 1.0, &du[0, 0], <int>H3)
            _gemm(b'N', b'T', <int>N, <int>H, <int>(2 * H), 1.0, &dxw[t, 0, 0], <int>H3,
                  up, <int>H3, 1.0, &ndh[0, 0], <int>H)
            dh[:, :] = ndh
    return dxw_arr, du_arr, dh_arr
