# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend: dense-layer forward/backward and Adam.

Hot path for training: these loops run millions of times per experiment.
Matches the numpy backend (`_kernels_py`) op for op; results agree to
floating-point rounding (summation order differs from BLAS).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh as ctanh

cnp.import_array()

BACKEND = "cy"


def affine(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t B = x.shape[0], I = x.shape[1], O = w.shape[1]
    z_arr = np.empty((B, O), dtype=np.float64)
    cdef double[:, ::1] z = z_arr
    cdef Py_ssize_t n, i, o
    cdef double xi
    for n in range(B):
        for o in range(O):
            z[n, o] = b[o]
        for i in range(I):
            xi = x[n, i]
            if xi != 0.0:
                for o in range(O):
                    z[n, o] += xi * w[i, o]
    return z_arr


def affine_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] dz):
    cdef Py_ssize_t B = x.shape[0], I = x.shape[1], O = w.shape[1]
    dx_arr = np.zeros((B, I), dtype=np.float64)
    dw_arr = np.zeros((I, O), dtype=np.float64)
    db_arr = np.zeros(O, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t n, i, o
    cdef double g, xi, acc
    for n in range(B):
        for o in range(O):
            db[o] += dz[n, o]
        for i in range(I):
            xi = x[n, i]
            acc = 0.0
            for o in range(O):
                g = dz[n, o]
                acc += g * w[i, o]
                dw[i, o] += xi * g
            dx[n, i] = acc
    return dx_arr, dw_arr, db_arr


def tanh(double[:, ::1] z):
    cdef Py_ssize_t B = z.shape[0], O = z.shape[1]
    a_arr = np.empty((B, O), dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef Py_ssize_t n, o
    for n in range(B):
        for o in range(O):
            a[n, o] = ctanh(z[n, o])
    return a_arr


def tanh_backward(double[:, ::1] a, double[:, ::1] da):
    cdef Py_ssize_t B = a.shape[0], O = a.shape[1]
    dz_arr = np.empty((B, O), dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    cdef Py_ssize_t n, o
    cdef double av
    for n in range(B):
        for o in range(O):
            av = a[n, o]
            dz[n, o] = da[n, o] * (1.0 - av * av)
    return dz_arr


def adam_step(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
              long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double gi, mhat, vhat
    for i in range(n):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * mhat / (sqrt(vhat) + eps)
