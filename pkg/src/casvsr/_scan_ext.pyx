# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scan kernels; hot inner loops of the selective scan.

Arithmetic mirrors the numpy fallback exactly (multiply then add, float32,
no fused multiply-add thanks to -ffp-contract=off), so the two backends
produce identical bits.
"""
import numpy as np

cimport cython

BACKEND = "cython"


def scan_states(float[:, :, ::1] a, float[:, :, ::1] b):
    """Inclusive states of h_t = a_t * h_{t-1} + b_t from h_0 = 0."""
    cdef Py_ssize_t length = a.shape[0]
    cdef Py_ssize_t nc = a.shape[1]
    cdef Py_ssize_t nn = a.shape[2]
    out_arr = np.empty((length, nc, nn), dtype=np.float32)
    h_arr = np.zeros((nc, nn), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef float[:, ::1] h = h_arr
    cdef Py_ssize_t t, c, n
    cdef float v
    for t in range(length):
        for c in range(nc):
            for n in range(nn):
                v = a[t, c, n] * h[c, n] + b[t, c, n]
                h[c, n] = v
                out[t, c, n] = v
    return out_arr


def scan_states_chunked(float[:, :, ::1] a, float[:, :, ::1] b, Py_ssize_t chunk):
    """Same recurrence via per-chunk affine maps h -> P*h + S."""
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    cdef Py_ssize_t length = a.shape[0]
    cdef Py_ssize_t nc = a.shape[1]
    cdef Py_ssize_t nn = a.shape[2]
    out_arr = np.empty((length, nc, nn), dtype=np.float32)
    if length == 0:
        return out_arr
    if chunk > length:
        chunk = length
    h_arr = np.zeros((nc, nn), dtype=np.float32)
    p_arr = np.empty((nc, nn), dtype=np.float32)
    s_arr = np.empty((nc, nn), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef float[:, ::1] h = h_arr
    cdef float[:, ::1] p = p_arr
    cdef float[:, ::1] s = s_arr
    cdef Py_ssize_t cs, ce, t, c, n
    cs = 0
    while cs < length:
        ce = cs + chunk
        if ce > length:
            ce = length
        for c in range(nc):
            for n in range(nn):
                p[c, n] = 1.0
                s[c, n] = 0.0
        for t in range(cs, ce):
            for c in range(nc):
                for n in range(nn):
                    p[c, n] = p[c, n] * a[t, c, n]
                    s[c, n] = a[t, c, n] * s[c, n] + b[t, c, n]
                    out[t, c, n] = p[c, n] * h[c, n] + s[c, n]
        for c in range(nc):
            for n in range(nn):
                h[c, n] = out[ce - 1, c, n]
        cs = ce
    return out_arr
