"""Pure-numpy kernel backend: shift-and-accumulate convolutions on BLAS."""

import numpy as np

from ._common import conv_weight_grad, dwconv_weight_grad, fold_padding, pad_spatial


def conv2d_forward(x, w, b, pad_mode="zeros"):
    """x (B,H,W,Ci), w (k,k,Ci,Co), b (Co,) -> (B,H,W,Co). Stride 1, same size."""
    k = w.shape[0]
    p = (k - 1) // 2
    xp = pad_spatial(x, p, pad_mode)
    B, H, W, _ = x.shape
    out = np.zeros((B, H, W, w.shape[3]), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            out += xp[:, di : di + H, dj : dj + W, :] @ w[di, dj]
    if b is not None:
        out += b
    return out


def conv2d_backward(x, w, gy, pad_mode="zeros", need_gx=True):
    k = w.shape[0]
    p = (k - 1) // 2
    B, H, W, _ = x.shape
    xp = pad_spatial(x, p, pad_mode)
    gx = None
    if need_gx:
        gxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                gxp[:, di : di + H, dj : dj + W, :] += gy @ w[di, dj].T
        gx = fold_padding(gxp, p, pad_mode)
    gw = conv_weight_grad(xp, gy, k)
    gb = gy.sum(axis=(0, 1, 2))
    return gx, gw, gb


def dwconv_forward(x, w, b, pad_mode="zeros"):
    """Depthwise conv: x (B,H,W,C), w (k,k,C), b (C,) -> (B,H,W,C)."""
    k = w.shape[0]
    p = (k - 1) // 2
    xp = pad_spatial(x, p, pad_mode)
    B, H, W, C = x.shape
    out = np.zeros_like(x)
    for di in range(k):
        for dj in range(k):
            out += xp[:, di : di + H, dj : dj + W, :] * w[di, dj]
    if b is not None:
        out += b
    return out


def dwconv_backward(x, w, gy, pad_mode="zeros"):
    k = w.shape[0]
    p = (k - 1) // 2
    B, H, W, C = x.shape
    xp = pad_spatial(x, p, pad_mode)
    gxp = np.zeros_like(xp)
    for di in range(k):
        for dj in range(k):
            gxp[:, di : di + H, dj : dj + W, :] += gy * w[di, dj]
    gx = fold_padding(gxp, p, pad_mode)
    gw = dwconv_weight_grad(xp, gy, k)
    gb = gy.sum(axis=(0, 1, 2))
    return gx, gw, gb


def scatter_add_rows(dst, idx, src):
    """dst[idx[n], :] += src[n, :] for all n, in index order."""
    np.add.at(dst, idx, src)
    return dst
