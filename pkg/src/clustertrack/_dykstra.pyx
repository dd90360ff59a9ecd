# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Dykstra kernel; mirrors ``_dykstra_py.dykstra``."""

import numpy as np
from libc.math cimport fabs, INFINITY


cdef double _sweep(double[::1] x, double[::1] start, const double[::1] lower,
                   const double[::1] upper, const long[::1] indptr,
                   const long[::1] indices, const double[::1] data,
                   const double[::1] rhs, const unsigned char[::1] is_eq,
                   const double[::1] inv_sq, double[::1] lam,
                   double[::1] box_corr) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t n_rows = rhs.shape[0]
    cdef Py_ssize_t i, r, p
    cdef double y, t, old, new, d, dot, amax, change = 0.0

    for i in range(n):
        start[i] = x[i]
        y = x[i] + box_corr[i]
        if y < lower[i]:
            x[i] = lower[i]
        elif y > upper[i]:
            x[i] = upper[i]
        else:
            x[i] = y
        d = fabs(box_corr[i] - (y - x[i]))
        if d > change:
            change = d
        box_corr[i] = y - x[i]

    for r in range(n_rows):
        dot = 0.0
        for p in range(indptr[r], indptr[r + 1]):
            dot += data[p] * x[indices[p]]
        old = lam[r]
        t = (dot - rhs[r]) * inv_sq[r] + old
        if is_eq[r] or t > 0.0:
            new = t
        else:
            new = 0.0
        if new != old:
            d = old - new
            amax = 0.0
            for p in range(indptr[r], indptr[r + 1]):
                x[indices[p]] += d * data[p]
                if fabs(data[p]) > amax:
                    amax = fabs(data[p])
            lam[r] = new
            if fabs(d) * amax > change:
                change = fabs(d) * amax

    for i in range(n):
        d = fabs(x[i] - start[i])
        if d > change:
            change = d
    return change


def dykstra(u, lower, upper, indptr, indices, data, rhs, is_eq, inv_sq,
            double[::1] lam, double[::1] box_corr, double tol, long max_sweeps):
    cdef double[::1] x = np.array(u, dtype=np.float64)
    cdef double[::1] start = np.empty_like(x)
    cdef const double[::1] lo = lower
    cdef const double[::1] hi = upper
    cdef const long[::1] ptr = indptr
    cdef const long[::1] idx = indices
    cdef const double[::1] val = data
    cdef const double[::1] b = rhs
    cdef const unsigned char[::1] eq = is_eq
    cdef const double[::1] isq = inv_sq
    cdef Py_ssize_t i, r, p
    cdef long sweeps = 0
    cdef double change = INFINITY

    with nogil:
        for i in range(x.shape[0]):
            x[i] -= box_corr[i]
        for r in range(b.shape[0]):
            if lam[r] != 0.0:
                for p in range(ptr[r], ptr[r + 1]):
                    x[idx[p]] -= lam[r] * val[p]
        while sweeps < max_sweeps:
            change = _sweep(x, start, lo, hi, ptr, idx, val, b, eq, isq,
                            lam, box_corr)
            sweeps += 1
            if change < tol:
                break
    return np.asarray(x), sweeps, change
