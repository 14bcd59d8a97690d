# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Gaussian log-density matrix and weighted scatter.

Semantics mirror wcemix._backend.numpy_backend exactly; dimensions are small
(p up to ~10) so the triangular solves are open-coded.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"

cdef double LOG_2PI = 1.8378770664093453


def mvn_logpdf_matrix(double[:, ::1] y, double[:, ::1] mus,
                      double[:, :, ::1] chols, double[::1] logdets):
    """Log density of each row of ``y`` under each Gaussian component."""
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t p = y.shape[1]
    cdef Py_ssize_t K = mus.shape[0]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, K))
    cdef double[:, ::1] o = out
    cdef double[::1] z = np.empty(p)
    cdef Py_ssize_t i, j, k, r
    cdef double acc, quad, base

    for k in range(K):
        base = -0.5 * (p * LOG_2PI + logdets[k])
        for i in range(n):
            quad = 0.0
            for j in range(p):
                acc = y[i, j] - mus[k, j]
                for r in range(j):
                    acc -= chols[k, j, r] * z[r]
                z[j] = acc / chols[k, j, j]
                quad += z[j] * z[j]
            o[i, k] = base - 0.5 * quad
    return out


def weighted_scatter(double[:, ::1] y, double[:, ::1] w,
                     double[:, ::1] centers):
    """Per-component weighted scatter matrices about fixed centers."""
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t p = y.shape[1]
    cdef Py_ssize_t K = w.shape[1]
    cdef cnp.ndarray[double, ndim=3] out = np.zeros((K, p, p))
    cdef double[:, :, ::1] o = out
    cdef double[::1] d = np.empty(p)
    cdef Py_ssize_t i, j, k, r
    cdef double wik

    for k in range(K):
        for i in range(n):
            wik = w[i, k]
            if wik == 0.0:
                continue
            for j in range(p):
                d[j] = y[i, j] - centers[k, j]
            for j in range(p):
                for r in range(j + 1):
                    o[k, j, r] += wik * d[j] * d[r]
    # mirror the lower triangle
    for k in range(K):
        for j in range(p):
            for r in range(j):
                o[k, r, j] = o[k, j, r]
    return out
