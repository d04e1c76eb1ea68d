# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the per-iteration hot kernels.

Semantics match qnpd.kernels._npops exactly (same layouts, same floor
conventions); only the evaluation strategy differs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, log, sqrt

cnp.import_array()


def grad2d(double[::1] x, Py_ssize_t h, Py_ssize_t w):
    out_arr = np.zeros(2 * h * w)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, p
    for i in range(h):
        for j in range(w):
            p = i * w + j
            if j < w - 1:
                out[2 * p] = x[p + 1] - x[p]
            if i < h - 1:
                out[2 * p + 1] = x[p + w] - x[p]
    return out_arr


def div2d(double[::1] y, Py_ssize_t h, Py_ssize_t w):
    out_arr = np.zeros(h * w)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double v
    for i in range(h):
        for j in range(w):
            p = i * w + j
            v = 0.0
            if j < w - 1:
                v -= y[2 * p]
            if j > 0:
                v += y[2 * (p - 1)]
            if i < h - 1:
                v -= y[2 * p + 1]
            if i > 0:
                v += y[2 * (p - w) + 1]
            out[p] = v
    return out_arr


def project_groups_l2(double[::1] v, double radius, Py_ssize_t gsize):
    cdef Py_ssize_t ngroups = v.shape[0] // gsize
    out_arr = np.empty(v.shape[0])
    cdef double[::1] out = out_arr
    cdef Py_ssize_t g, j, base
    cdef double nrm, scale
    for g in range(ngroups):
        base = g * gsize
        nrm = 0.0
        for j in range(gsize):
            nrm += v[base + j] * v[base + j]
        nrm = sqrt(nrm)
        scale = radius / nrm if nrm > radius else 1.0
        for j in range(gsize):
            out[base + j] = v[base + j] * scale
    return out_arr


def kl_sum(double[::1] b, double[::1] z, double floor=0.0):
    cdef Py_ssize_t i, n = b.shape[0]
    cdef double acc = 0.0, zi
    cdef long n_floored = 0
    for i in range(n):
        zi = z[i]
        acc += zi
        if b[i] > 0.0:
            if zi < floor:
                zi = floor
                n_floored += 1
            elif zi <= 0.0:
                return INFINITY, 0
            acc -= b[i] * log(zi)
    return acc, n_floored


def kl_grad_factor(double[::1] b, double[::1] z, double floor=0.0):
    cdef Py_ssize_t i, n = b.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double zi
    cdef long n_floored = 0
    for i in range(n):
        if b[i] > 0.0:
            zi = z[i]
            if zi < floor:
                zi = floor
                n_floored += 1
            out[i] = 1.0 - b[i] / zi
        else:
            out[i] = 1.0
    return out_arr, n_floored


def convolve2d_wrap(double[::1] x, double[:, ::1] kernel, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t rh = kh // 2, rw = kw // 2
    out_arr = np.zeros(h * w)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, a, bb, ii, jj
    cdef double acc
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                ii = (i - a + rh + h) % h
                for bb in range(kw):
                    jj = (j - bb + rw + w) % w
                    acc += kernel[a, bb] * x[ii * w + jj]
            out[i * w + j] = acc
    return out_arr


def correlate2d_wrap(double[::1] x, double[:, ::1] kernel, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t rh = kh // 2, rw = kw // 2
    out_arr = np.zeros(h * w)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, a, bb, ii, jj
    cdef double acc
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                ii = (i + a - rh + h) % h
                for bb in range(kw):
                    jj = (j + bb - rw + w) % w
                    acc += kernel[a, bb] * x[ii * w + jj]
            out[i * w + j] = acc
    return out_arr
