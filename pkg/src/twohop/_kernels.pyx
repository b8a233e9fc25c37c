# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. ``_fallback`` holds the reference numpy versions."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_rows(labels, values, Py_ssize_t n_labels):
    cdef const long long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef const double[:, ::1] val = np.ascontiguousarray(values, dtype=np.float64)
    out_arr = np.zeros((n_labels, val.shape[1]))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, m
    for i in range(val.shape[0]):
        m = lab[i]
        for j in range(val.shape[1]):
            out[m, j] += val[i, j]
    return out_arr


cdef void _digits(Py_ssize_t j, Py_ssize_t base, Py_ssize_t n, long long* d) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(n - 1, -1, -1):
        d[k] = j % base
        j //= base


def pair_scores(codebook, lut, Py_ssize_t n):
    cdef const long long[:, ::1] cb = np.ascontiguousarray(codebook, dtype=np.int64)
    cdef const double[:, ::1] L = np.ascontiguousarray(lut, dtype=np.float64)
    cdef Py_ssize_t base = L.shape[1]
    cdef Py_ssize_t n_seq = base ** n
    cdef Py_ssize_t n_cw = cb.shape[0]
    out_arr = np.empty((n_cw, n_seq))
    cdef double[:, ::1] out = out_arr
    digits_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] d = digits_arr
    cdef Py_ssize_t i, j, k
    cdef double s
    with nogil:
        for j in range(n_seq):
            _digits(j, base, n, &d[0])
            for i in range(n_cw):
                s = 0.0
                for k in range(n):
                    s = s + L[cb[i, k], d[k]]
                out[i, j] = s
    return out_arr


def best_codeword(codebook, lut, Py_ssize_t n):
    cdef const long long[:, ::1] cb = np.ascontiguousarray(codebook, dtype=np.int64)
    cdef const double[:, ::1] L = np.ascontiguousarray(lut, dtype=np.float64)
    cdef Py_ssize_t base = L.shape[1]
    cdef Py_ssize_t n_seq = base ** n
    cdef Py_ssize_t n_cw = cb.shape[0]
    arg_arr = np.zeros(n_seq, dtype=np.int64)
    best_arr = np.full(n_seq, -np.inf)
    cdef long long[::1] arg = arg_arr
    cdef double[::1] best = best_arr
    digits_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] d = digits_arr
    cdef Py_ssize_t i, j, k
    cdef double s
    with nogil:
        for j in range(n_seq):
            _digits(j, base, n, &d[0])
            for i in range(n_cw):
                s = 0.0
                for k in range(n):
                    s = s + L[cb[i, k], d[k]]
                if s > best[j]:
                    best[j] = s
                    arg[j] = i
    return arg_arr, best_arr
