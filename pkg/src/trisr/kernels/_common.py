"""Padding helpers shared by both kernel backends."""

import numpy as np


def pad_spatial(x, p, mode):
    """Pad (B, H, W, C) by p on each spatial side. mode: 'zeros' | 'wrap'."""
    if p == 0:
        return x
    widths = ((0, 0), (p, p), (p, p), (0, 0))
    if mode == "zeros":
        return np.pad(x, widths)
    if mode == "wrap":
        return np.pad(x, widths, mode="wrap")
    raise ValueError(f"unknown pad mode {mode!r}")


def fold_padding(gp, p, mode):
    """Adjoint of pad_spatial: collapse a padded gradient back to (B, H, W, C).

    For 'wrap' the margins accumulate onto the rows/cols they were copied
    from; requires p <= H and p <= W.
    """
    if p == 0:
        return gp
    B, Hp, Wp, C = gp.shape
    H, W = Hp - 2 * p, Wp - 2 * p
    if mode == "zeros":
        return gp[:, p : p + H, p : p + W, :]
    if mode != "wrap":
        raise ValueError(f"unknown pad mode {mode!r}")
    if p > H or p > W:
        raise ValueError("wrap fold needs pad <= spatial dims")
    rows = gp[:, p : p + H, :, :].copy()
    rows[:, H - p :, :, :] += gp[:, :p, :, :]
    rows[:, :p, :, :] += gp[:, p + H :, :, :]
    out = rows[:, :, p : p + W, :].copy()
    out[:, :, W - p :, :] += rows[:, :, :p, :]
    out[:, :, :p, :] += rows[:, :, p + W :, :]
    return out


def conv_weight_grad(xp, gy, k):
    """dL/dw for a valid conv: xp (B,Hp,Wp,Ci), gy (B,H,W,Co) -> (k,k,Ci,Co).

    A reduction, not a loop kernel, so both backends share this BLAS form.
    """
    B, H, W, Co = gy.shape
    Ci = xp.shape[3]
    gyf = gy.reshape(B * H * W, Co)
    gw = np.empty((k, k, Ci, Co), dtype=gy.dtype)
    for di in range(k):
        for dj in range(k):
            patch = xp[:, di : di + H, dj : dj + W, :].reshape(B * H * W, Ci)
            gw[di, dj] = patch.T @ gyf
    return gw


def dwconv_weight_grad(xp, gy, k):
    """dL/dw for a valid depthwise conv: -> (k, k, C)."""
    B, H, W, C = gy.shape
    gw = np.empty((k, k, C), dtype=gy.dtype)
    for di in range(k):
        for dj in range(k):
            patch = xp[:, di : di + H, dj : dj + W, :]
            gw[di, dj] = np.einsum("bijc,bijc->c", patch, gy)
    return gw
