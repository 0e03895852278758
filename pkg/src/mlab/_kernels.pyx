# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the loops in ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow

cnp.import_array()


def damped_em(x0, dw, double dt, double alpha, double threshold, double sigma_scale):
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, ::1] dwv = np.ascontiguousarray(dw, dtype=np.float64)
    cdef Py_ssize_t n = dwv.shape[0], m = dwv.shape[1], i, k
    out = np.empty((n, m + 1))
    cdef double[:, ::1] o = out
    cdef double x, p
    cdef bint frozen
    for i in range(n):
        x = x0v[i]
        frozen = False
        if threshold > 0 and fabs(x) < threshold:
            x = 0.0
            frozen = True
        o[i, 0] = x
        for k in range(m):
            if frozen:
                o[i, k + 1] = 0.0
                continue
            p = pow(fabs(x), alpha)
            x = x - x * dt + sigma_scale * (p / (1.0 + p)) * dwv[i, k]
            if threshold > 0 and fabs(x) < threshold:
                x = 0.0
                frozen = True
            o[i, k + 1] = x
    return out


def triad_convolution(u, v, kk, pp, qq, qvec, Py_ssize_t n_half):
    cdef double complex[:, :, ::1] uv = np.ascontiguousarray(u, dtype=np.complex128)
    cdef double complex[:, :, ::1] vv = np.ascontiguousarray(v, dtype=np.complex128)
    cdef long long[::1] kv = np.ascontiguousarray(kk, dtype=np.int64)
    cdef long long[::1] pv = np.ascontiguousarray(pp, dtype=np.int64)
    cdef long long[::1] qv = np.ascontiguousarray(qq, dtype=np.int64)
    cdef double[:, ::1] qs = np.ascontiguousarray(qvec, dtype=np.float64)
    cdef Py_ssize_t n = uv.shape[0], nt = kv.shape[0], i, t, k, p, q
    out = np.zeros((n, n_half, 3), dtype=np.complex128)
    cdef double complex[:, :, ::1] o = out
    cdef double complex d
    for i in range(n):
        for t in range(nt):
            k = kv[t]
            p = pv[t]
            q = qv[t]
            d = uv[i, p, 0] * qs[t, 0] + uv[i, p, 1] * qs[t, 1] + uv[i, p, 2] * qs[t, 2]
            d = 1j * d
            o[i, k, 0] = o[i, k, 0] + d * vv[i, q, 0]
            o[i, k, 1] = o[i, k, 1] + d * vv[i, q, 1]
            o[i, k, 2] = o[i, k, 2] + d * vv[i, q, 2]
    return out
