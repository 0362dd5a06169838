# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core: the per-step statistics the patch scheduler runs
on every denoising step for every candidate patch size.

Reductions use float64 accumulators in a fixed (row, col, channel) order,
so results are reproducible independent of how work is scheduled.
"""

import numpy as np

from libc.math cimport sqrt


def per_patch_std(double[:, :, ::1] field, Py_ssize_t edge):
    """Population std per non-overlapping edge x edge patch, channels pooled."""
    cdef Py_ssize_t h = field.shape[0]
    cdef Py_ssize_t w = field.shape[1]
    cdef Py_ssize_t c = field.shape[2]
    cdef Py_ssize_t gh = h // edge
    cdef Py_ssize_t gw = w // edge
    cdef Py_ssize_t n = edge * edge * c
    cdef Py_ssize_t gi, gj, r, col, ch
    cdef double acc, mean, dev, var, v

    out = np.empty((gh, gw), dtype=np.float64)
    cdef double[:, ::1] o = out
    for gi in range(gh):
        for gj in range(gw):
            acc = 0.0
            for r in range(edge):
                for col in range(edge):
                    for ch in range(c):
                        acc += field[gi * edge + r, gj * edge + col, ch]
            mean = acc / n
            var = 0.0
            for r in range(edge):
                for col in range(edge):
                    for ch in range(c):
                        v = field[gi * edge + r, gj * edge + col, ch]
                        dev = v - mean
                        var += dev * dev
            o[gi, gj] = sqrt(var / n)
    return out


def window_combine(double[:, ::1] stack, double[::1] coeffs):
    """Linear combination sum_k coeffs[k] * stack[k] over a (K, M) stack."""
    cdef Py_ssize_t k = stack.shape[0]
    cdef Py_ssize_t m = stack.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc

    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    for j in range(m):
        acc = 0.0
        for i in range(k):
            acc += coeffs[i] * stack[i, j]
        o[j] = acc
    return out
