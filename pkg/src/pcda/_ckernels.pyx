# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``pcda._kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def pairwise_sqdist(const double[:, ::1] X, const double[:, ::1] Y):
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = X[i, k] - Y[j, k]
                    acc = acc + diff * diff
                o[i, j] = acc
    return out


def segment_max(const double[:, ::1] H, const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t B = offsets.shape[0] - 1, C = H.shape[1]
    cdef Py_ssize_t b, r, c, start, stop
    cdef double v
    vals = np.empty((B, C), dtype=np.float64)
    arg = np.empty((B, C), dtype=np.int64)
    cdef double[:, ::1] vv = vals
    cdef cnp.int64_t[:, ::1] aa = arg
    with nogil:
        for b in range(B):
            start = offsets[b]
            stop = offsets[b + 1]
            for c in range(C):
                vv[b, c] = H[start, c]
                aa[b, c] = start
            for r in range(start + 1, stop):
                for c in range(C):
                    v = H[r, c]
                    if v > vv[b, c]:
                        vv[b, c] = v
                        aa[b, c] = r
    return vals, arg


def segment_max_backward(const double[:, ::1] grad, const cnp.int64_t[:, ::1] argmax,
                         Py_ssize_t n_rows):
    cdef Py_ssize_t B = grad.shape[0], C = grad.shape[1]
    cdef Py_ssize_t b, c
    out = np.zeros((n_rows, C), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for b in range(B):
            for c in range(C):
                o[argmax[b, c], c] += grad[b, c]
    return out
