# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled throughput kernels.

Both routines walk the per-link "affecting node" lists stored in CSR form:
for link k = (i, j) the segment ``aff_idx[aff_ptr[k]:aff_ptr[k + 1]]`` holds
the receiver j followed by the interferers of j other than i.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def reception(const double[::1] P,
              const cnp.intp_t[::1] aff_ptr,
              const cnp.intp_t[::1] aff_idx):
    cdef Py_ssize_t m = aff_ptr.shape[0] - 1
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] r = out
    cdef Py_ssize_t k, e
    cdef double acc
    for k in range(m):
        acc = 1.0
        for e in range(aff_ptr[k], aff_ptr[k + 1]):
            acc *= 1.0 - P[aff_idx[e]]
        r[k] = acc
    return out


def interference_weights(const double[::1] w,
                         const double[::1] P,
                         const cnp.intp_t[::1] aff_ptr,
                         const cnp.intp_t[::1] aff_idx,
                         Py_ssize_t n):
    cdef Py_ssize_t m = aff_ptr.shape[0] - 1
    cdef Py_ssize_t k, e, start, stop, width = 0
    for k in range(m):
        if aff_ptr[k + 1] - aff_ptr[k] > width:
            width = aff_ptr[k + 1] - aff_ptr[k]
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] W = out
    suffix_arr = np.empty(width + 1, dtype=np.float64)
    cdef double[::1] suffix = suffix_arr
    cdef double pre, acc, wk
    for k in range(m):
        wk = w[k]
        if wk == 0.0:
            continue
        start = aff_ptr[k]
        stop = aff_ptr[k + 1]
        acc = 1.0
        for e in range(stop - 1, start - 1, -1):
            suffix[e - start] = acc
            acc *= 1.0 - P[aff_idx[e]]
        pre = 1.0
        for e in range(start, stop):
            W[aff_idx[e]] += wk * pre * suffix[e - start]
            pre *= 1.0 - P[aff_idx[e]]
    return out
