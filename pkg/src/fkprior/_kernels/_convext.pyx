# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 2-D convolution hot kernels (valid mode, true convolution).

Semantics match fkprior._kernels._conv_np exactly; parity is enforced by the
test suite and the benchmark in benchmarks/bench_kernels.py compares both.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_valid(double[:, ::1] x, double[:, ::1] k):
    cdef Py_ssize_t hx = x.shape[0], wx = x.shape[1]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t ho = hx - kh + 1, wo = wx - kw + 1
    out_arr = np.zeros((ho, wo), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, u, v
    cdef double acc
    with nogil:
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for u in range(kh):
                    for v in range(kw):
                        acc += x[i + u, j + v] * k[kh - 1 - u, kw - 1 - v]
                out[i, j] = acc
    return out_arr


def conv2d_valid_grad_input(double[:, ::1] g, double[:, ::1] k,
                            Py_ssize_t hx, Py_ssize_t wx):
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t ho = g.shape[0], wo = g.shape[1]
    gx_arr = np.zeros((hx, wx), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j, u, v
    cdef double gij
    with nogil:
        for i in range(ho):
            for j in range(wo):
                gij = g[i, j]
                for u in range(kh):
                    for v in range(kw):
                        gx[i + u, j + v] += gij * k[kh - 1 - u, kw - 1 - v]
    return gx_arr


def conv2d_valid_grad_kernel(double[:, ::1] x, double[:, ::1] g,
                             Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t ho = g.shape[0], wo = g.shape[1]
    gk_arr = np.zeros((kh, kw), dtype=np.float64)
    cdef double[:, ::1] gk = gk_arr
    cdef Py_ssize_t i, j, u, v
    cdef double gij
    with nogil:
        for i in range(ho):
            for j in range(wo):
                gij = g[i, j]
                for u in range(kh):
                    for v in range(kw):
                        gk[kh - 1 - u, kw - 1 - v] += gij * x[i + u, j + v]
    return gk_arr
