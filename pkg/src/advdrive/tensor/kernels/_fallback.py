"""Pure-numpy implementations of the hot convolution and pooling kernels.

Layouts are NHWC. Patch columns are ordered (kernel row, kernel col, channel),
matching a K x K x Cin x F kernel reshaped to (K*K*Cin, F).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride):
    n, hp, wp, c = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # win: N, Ho, Wo, C, k, k -> N, Ho, Wo, k, k, C
    win = win[:, :ho, :wo].transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(win).reshape(n * ho * wo, k * k * c)


def col2im(cols, xp_shape, k, stride):
    n, hp, wp, c = xp_shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = cols.reshape(n, ho, wo, k, k, c)
    out = np.zeros(xp_shape, dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, ki:ki + stride * (ho - 1) + 1:stride,
                kj:kj + stride * (wo - 1) + 1:stride, :] += cols[:, :, :, ki, kj, :]
    return out


def maxpool2_forward(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :2 * ho, :2 * wo].reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 2, 4, 5)
    win = win.reshape(n, ho, wo, 4, c)
    # argmax returns the first maximal index, giving row-major first-occurrence ties
    arg = np.argmax(win, axis=3).astype(np.uint8)
    out = np.take_along_axis(win, arg[:, :, :, None, :].astype(np.intp), axis=3)[:, :, :, 0]
    return out, arg


def maxpool2_backward(g, arg, in_shape):
    n, h, w, c = in_shape
    ho, wo = g.shape[1], g.shape[2]
    win = np.zeros((n, ho, wo, 4, c), dtype=g.dtype)
    np.put_along_axis(win, arg[:, :, :, None, :].astype(np.intp), g[:, :, :, None, :], axis=3)
    win = win.reshape(n, ho, wo, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * ho, 2 * wo, c)
    if 2 * ho == h and 2 * wo == w:
        return np.ascontiguousarray(win)
    out = np.zeros(in_shape, dtype=g.dtype)
    out[:, :2 * ho, :2 * wo] = win
    return out
