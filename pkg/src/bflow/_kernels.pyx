# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled uniform cubic B-spline evaluation.

Coefficient arrays come from :mod:`bflow.interp`. Non-periodic axes carry
``n + 2`` coefficients (one ghost on each side); periodic axes carry ``n``.
Evaluation coordinates are in index units of the sample grid.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline void _weights(double t, int deriv, double* w) noexcept nogil:
    cdef double s = 1.0 - t
    if deriv == 0:
        w[0] = s * s * s / 6.0
        w[1] = (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0
        w[2] = (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0
        w[3] = t * t * t / 6.0
    elif deriv == 1:
        w[0] = -s * s / 2.0
        w[1] = (3.0 * t * t - 4.0 * t) / 2.0
        w[2] = (-3.0 * t * t + 2.0 * t + 1.0) / 2.0
        w[3] = t * t / 2.0
    else:
        w[0] = s
        w[1] = 3.0 * t - 2.0
        w[2] = -3.0 * t + 1.0
        w[3] = t


cdef inline void _locate(double u, Py_ssize_t n, bint periodic,
                         Py_ssize_t* idx, double* t) noexcept nogil:
    cdef double fl
    cdef Py_ssize_t i, k
    fl = floor(u)
    i = <Py_ssize_t> fl
    if periodic:
        t[0] = u - fl
        for k in range(4):
            idx[k] = (i - 1 + k) % n
            if idx[k] < 0:
                idx[k] += n
    else:
        if i < 0:
            i = 0
        elif i > n - 2:
            i = n - 2
        t[0] = u - i
        for k in range(4):
            idx[k] = i + k


def eval_1d(const double[:, ::1] coef, const double[::1] u, Py_ssize_t n,
            bint periodic, int deriv):
    cdef Py_ssize_t m = u.shape[0]
    cdef Py_ssize_t nc = coef.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((m, nc))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, k, c
    cdef Py_ssize_t idx[4]
    cdef double w[4]
    cdef double t
    with nogil:
        for p in range(m):
            _locate(u[p], n, periodic, idx, &t)
            _weights(t, deriv, w)
            for k in range(4):
                for c in range(nc):
                    out[p, c] += w[k] * coef[idx[k], c]
    return out_arr


def eval_2d(const double[:, :, ::1] coef, const double[::1] u, const double[::1] v,
            Py_ssize_t nu, Py_ssize_t nv, bint per_u, bint per_v, int du, int dv):
    cdef Py_ssize_t m = u.shape[0]
    cdef Py_ssize_t nc = coef.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((m, nc))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, a, b, c
    cdef Py_ssize_t iu[4]
    cdef Py_ssize_t iv[4]
    cdef double wu[4]
    cdef double wv[4]
    cdef double tu, tv, wab
    with nogil:
        for p in range(m):
            _locate(u[p], nu, per_u, iu, &tu)
            _locate(v[p], nv, per_v, iv, &tv)
            _weights(tu, du, wu)
            _weights(tv, dv, wv)
            for a in range(4):
                for b in range(4):
                    wab = wu[a] * wv[b]
                    for c in range(nc):
                        out[p, c] += wab * coef[iu[a], iv[b], c]
    return out_arr
