# cython: language_level=3
"""Compiled conv1d kernels: same algorithm as ``_conv_py`` with BLAS
``dgemm`` accumulating straight into the output buffers (``beta = 1``), so
no per-tap temporaries are allocated."""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm(char *ta, char *tb, int m, int n, int k,
                       double *a, int lda, double *b, int ldb,
                       double beta, double *c, int ldc) noexcept nogil:
    cdef double alpha = 1.0
    dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def pack(double[:, :, ::1] x, int k):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t left = (k - 1) // 2
    cdef Py_ssize_t lp = length + k - 1
    cdef Py_ssize_t ib, ic, il, base
    out = np.zeros((c, b * lp))
    cdef double[:, ::1] buf = out
    with nogil:
        for ic in range(c):
            for ib in range(b):
                base = ib * lp + left
                for il in range(length):
                    buf[ic, base + il] = x[ib, ic, il]
    return out


def conv1d_forward(x, weight, bias):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t b = x.shape[0], length = x.shape[2]
    cdef Py_ssize_t c_out = weight.shape[0], c_in = weight.shape[1], k = weight.shape[2]
    cdef Py_ssize_t lp = length + k - 1
    cdef int n = <int>(b * lp - (k - 1))
    cdef int ld = <int>(b * lp)

    xcol_arr = pack(x, <int>k)
    # taps packed as (k, C_out, C_in) so each tap is one contiguous matrix
    wt_arr = np.ascontiguousarray(np.transpose(weight, (2, 0, 1)), dtype=np.float64)
    outcol_arr = np.zeros((c_out, b * lp))
    cdef double[:, ::1] xcol = xcol_arr
    cdef double[:, :, ::1] wt = wt_arr
    cdef double[:, ::1] outcol = outcol_arr
    cdef Py_ssize_t j
    with nogil:
        for j in range(k):
            # out[:, :n] += W_j @ xcol[:, j:j+n]
            _gemm(b"N", b"N", n, <int>c_out, <int>c_in,
                  &xcol[0, j], ld, &wt[j, 0, 0], <int>c_in,
                  1.0, &outcol[0, 0], ld)

    out = np.empty((b, c_out, length))
    cdef double[:, :, ::1] o = out
    cdef double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t ib, ic, il, base
    with nogil:
        for ib in range(b):
            base = ib * lp
            for ic in range(c_out):
                for il in range(length):
                    o[ib, ic, il] = outcol[ic, base + il] + bv[ic]
    return out, xcol_arr


def conv1d_backward(grad_out, xcol_arr, weight, bint need_input_grad=True):
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef Py_ssize_t b = grad_out.shape[0], length = grad_out.shape[2]
    cdef Py_ssize_t c_out = weight.shape[0], c_in = weight.shape[1], k = weight.shape[2]
    cdef Py_ssize_t left = (k - 1) // 2
    cdef Py_ssize_t lp = length + k - 1
    cdef int n = <int>(b * lp - (k - 1))
    cdef int ld = <int>(b * lp)

    cdef double[:, :, ::1] go = grad_out
    g_arr = np.zeros((c_out, b * lp))
    cdef double[:, ::1] g = g_arr
    cdef Py_ssize_t ib, ic, il, base, j
    with nogil:
        for ic in range(c_out):
            for ib in range(b):
                base = ib * lp
                for il in range(length):
                    g[ic, base + il] = go[ib, ic, il]

    cdef double[:, ::1] xcol = xcol_arr
    wt_arr = np.ascontiguousarray(np.transpose(weight, (2, 0, 1)), dtype=np.float64)
    cdef double[:, :, ::1] wt = wt_arr
    dwt_arr = np.empty((k, c_out, c_in))
    cdef double[:, :, ::1] dwt = dwt_arr
    dxcol_arr = np.zeros((c_in, b * lp)) if need_input_grad else np.zeros((1, 1))
    cdef double[:, ::1] dxcol = dxcol_arr
    with nogil:
        for j in range(k):
            # dW_j = G[:, :n] @ xcol[:, j:j+n].T
            _gemm(b"T", b"N", <int>c_in, <int>c_out, n,
                  &xcol[0, j], ld, &g[0, 0], ld,
                  0.0, &dwt[j, 0, 0], <int>c_in)
            if need_input_grad:
                # dxcol[:, j:j+n] += W_j.T @ G[:, :n]
                _gemm(b"N", b"T", n, <int>c_in, <int>c_out,
                      &g[0, 0], ld, &wt[j, 0, 0], <int>c_in,
                      1.0, &dxcol[0, j], ld)

    grad_weight = np.ascontiguousarray(np.transpose(dwt_arr, (1, 2, 0)))
    grad_bias = grad_out.sum(axis=(0, 2))
    if not need_input_grad:
        return None, grad_weight, grad_bias

    grad_x = np.empty((b, c_in, length))
    cdef double[:, :, ::1] gx = grad_x
    with nogil:
        for ib in range(b):
            base = ib * lp + left
            for ic in range(c_in):
                for il in range(length):
                    gx[ib, ic, il] = dxcol[ic, base + il]
    return grad_x, grad_weight, grad_bias
