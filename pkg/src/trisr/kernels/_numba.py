"""Numba kernel backend: jitted loop kernels for the hot inner convolutions.

Weight gradients are reductions that map straight onto BLAS, so they reuse
the shared helpers; the loop-shaped work (forward conv, input gradients,
scatter-add) runs under @njit.
"""

import numpy as np
from numba import njit, prange

from ._common import conv_weight_grad, dwconv_weight_grad, fold_padding, pad_spatial


@njit(parallel=True, cache=True)
def _conv2d_valid(xp, wt, out):
    # xp (B,Hp,Wp,Cin), wt (k,k,Cout,Cin) channel-last for contiguous reads
    B, H, W, Co = out.shape
    k = wt.shape[0]
    Ci = wt.shape[3]
    for bi in prange(B * H):
        b = bi // H
        i = bi - b * H
        for j in range(W):
            for co in range(Co):
                acc = xp[b, i, j, 0] - xp[b, i, j, 0]
                for di in range(k):
                    for dj in range(k):
                        for ci in range(Ci):
                            acc += xp[b, i + di, j + dj, ci] * wt[di, dj, co, ci]
                out[b, i, j, co] = acc


@njit(parallel=True, cache=True)
def _dwconv_valid(xp, w, out):
    # xp (B,Hp,Wp,C), w (k,k,C)
    B, H, W, C = out.shape
    k = w.shape[0]
    for bi in prange(B * H):
        b = bi // H
        i = bi - b * H
        for j in range(W):
            for c in range(C):
                acc = xp[b, i, j, 0] - xp[b, i, j, 0]
                for di in range(k):
                    for dj in range(k):
                        acc += xp[b, i + di, j + dj, c] * w[di, dj, c]
                out[b, i, j, c] = acc


@njit(parallel=True, cache=True)
def _scatter_add(dst, idx, src):
    N, M = src.shape
    for m in prange(M):
        for n in range(N):
            dst[idx[n], m] += src[n, m]


def conv2d_forward(x, w, b, pad_mode="zeros"):
    k = w.shape[0]
    p = (k - 1) // 2
    xp = np.ascontiguousarray(pad_spatial(x, p, pad_mode))
    wt = np.ascontiguousarray(w.transpose(0, 1, 3, 2))
    B, H, W, _ = x.shape
    out = np.empty((B, H, W, w.shape[3]), dtype=x.dtype)
    _conv2d_valid(xp, wt, out)
    if b is not None:
        out += b
    return out


def conv2d_backward(x, w, gy, pad_mode="zeros", need_gx=True):
    k = w.shape[0]
    p = (k - 1) // 2
    B, H, W, Ci = x.shape
    xp = np.ascontiguousarray(pad_spatial(x, p, pad_mode))
    gx = None
    if need_gx:
        # dX is the valid conv of the (k-1)-zero-padded output gradient with
        # the 180-degree-rotated kernel; (k,k,Ci,Co) is already (out, in) order.
        gyp = np.ascontiguousarray(pad_spatial(gy, k - 1, "zeros"))
        wflip = np.ascontiguousarray(w[::-1, ::-1])
        gxp = np.empty((B, H + 2 * p, W + 2 * p, Ci), dtype=x.dtype)
        _conv2d_valid(gyp, wflip, gxp)
        gx = fold_padding(gxp, p, pad_mode)
    gw = conv_weight_grad(xp, gy, k)
    gb = gy.sum(axis=(0, 1, 2))
    return gx, gw, gb


def dwconv_forward(x, w, b, pad_mode="zeros"):
    k = w.shape[0]
    p = (k - 1) // 2
    xp = np.ascontiguousarray(pad_spatial(x, p, pad_mode))
    out = np.empty_like(x)
    _dwconv_valid(xp, np.ascontiguousarray(w), out)
    if b is not None:
        out += b
    return out


def dwconv_backward(x, w, gy, pad_mode="zeros"):
    k = w.shape[0]
    p = (k - 1) // 2
    B, H, W, C = x.shape
    xp = np.ascontiguousarray(pad_spatial(x, p, pad_mode))
    gyp = np.ascontiguousarray(pad_spatial(gy, k - 1, "zeros"))
    wflip = np.ascontiguousarray(w[::-1, ::-1])
    gxp = np.empty((B, H + 2 * p, W + 2 * p, C), dtype=x.dtype)
    _dwconv_valid(gyp, wflip, gxp)
    gx = fold_padding(gxp, p, pad_mode)
    gw = dwconv_weight_grad(xp, gy, k)
    gb = gy.sum(axis=(0, 1, 2))
    return gx, gw, gb


def scatter_add_rows(dst, idx, src):
    _scatter_add(dst, np.ascontiguousarray(idx), np.ascontiguousarray(src))
    return dst
