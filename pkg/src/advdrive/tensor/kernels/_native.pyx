# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_fallback``; same layouts and results."""
import numpy as np
cimport cython
from libc.string cimport memcpy

ctypedef fused real:
    float
    double


def _im2col(const real[:, :, :, ::1] xp, real[:, ::1] out, int k, int stride):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t ho = (hp - k) // stride + 1, wo = (wp - k) // stride + 1
    cdef Py_ssize_t b, i, j, ki, row, off
    cdef size_t seg = k * c * sizeof(real)
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    row = (b * ho + i) * wo + j
                    off = 0
                    for ki in range(k):
                        memcpy(&out[row, off], &xp[b, i * stride + ki, j * stride, 0], seg)
                        off = off + k * c


def _col2im(const real[:, ::1] cols, real[:, :, :, ::1] out, int k, int stride):
    cdef Py_ssize_t n = out.shape[0], hp = out.shape[1], wp = out.shape[2], c = out.shape[3]
    cdef Py_ssize_t ho = (hp - k) // stride + 1, wo = (wp - k) // stride + 1
    cdef Py_ssize_t b, i, j, ki, kj, ch, row, off
    cdef real* dst
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    row = (b * ho + i) * wo + j
                    off = 0
                    for ki in range(k):
                        dst = &out[b, i * stride + ki, j * stride, 0]
                        for kj in range(k * c):
                            dst[kj] += cols[row, off + kj]
                        off = off + k * c


def _maxpool2_forward(const real[:, :, :, ::1] x, real[:, :, :, ::1] out,
                      unsigned char[:, :, :, ::1] arg):
    cdef Py_ssize_t n = out.shape[0], ho = out.shape[1], wo = out.shape[2], c = out.shape[3]
    cdef Py_ssize_t b, i, j, ch
    cdef real best, v
    cdef unsigned char a
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for ch in range(c):
                        best = x[b, 2 * i, 2 * j, ch]
                        a = 0
                        v = x[b, 2 * i, 2 * j + 1, ch]
                        if v > best:
                            best = v
                            a = 1
                        v = x[b, 2 * i + 1, 2 * j, ch]
                        if v > best:
                            best = v
                            a = 2
                        v = x[b, 2 * i + 1, 2 * j + 1, ch]
                        if v > best:
                            best = v
                            a = 3
                        out[b, i, j, ch] = best
                        arg[b, i, j, ch] = a


def _maxpool2_backward(const real[:, :, :, ::1] g, const unsigned char[:, :, :, ::1] arg,
                       real[:, :, :, ::1] out):
    cdef Py_ssize_t n = g.shape[0], ho = g.shape[1], wo = g.shape[2], c = g.shape[3]
    cdef Py_ssize_t b, i, j, ch
    cdef unsigned char a
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for ch in range(c):
                        a = arg[b, i, j, ch]
                        out[b, 2 * i + (a >> 1), 2 * j + (a & 1), ch] = g[b, i, j, ch]


def im2col(xp, int k, int stride):
    xp = np.ascontiguousarray(xp)
    n, hp, wp, c = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    out = np.empty((n * ho * wo, k * k * c), dtype=xp.dtype)
    _im2col(xp, out, k, stride)
    return out


def col2im(cols, xp_shape, int k, int stride):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(xp_shape, dtype=cols.dtype)
    _col2im(cols, out, k, stride)
    return out


def maxpool2_forward(x):
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    out = np.empty((n, h // 2, w // 2, c), dtype=x.dtype)
    arg = np.empty((n, h // 2, w // 2, c), dtype=np.uint8)
    _maxpool2_forward(x, out, arg)
    return out, arg


def maxpool2_backward(g, arg, in_shape):
    g = np.ascontiguousarray(g)
    out = np.zeros(in_shape, dtype=g.dtype)
    _maxpool2_backward(g, np.ascontiguousarray(arg), out)
    return out
