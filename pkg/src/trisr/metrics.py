"""Fidelity metrics on the BT.601 luma channel with a border shave."""

import math

import numpy as np
from scipy.signal import convolve2d

# BT.601 studio-swing luma from RGB in [0, 1]: Y in [16, 235]
_YR, _YG, _YB, _YOFF = 65.481, 128.553, 24.966, 16.0


def to_luma(img):
    """(H, W, 3) RGB in [0, 1] -> (H, W) luma in the 0..255 domain."""
    img = np.asarray(img, dtype=np.float64)
    return _YOFF + _YR * img[..., 0] + _YG * img[..., 1] + _YB * img[..., 2]


def _shaved_luma(sr, hr, border):
    sr = np.asarray(sr)
    hr = np.asarray(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {sr.shape} vs {hr.shape}")
    ys, yh = to_luma(sr), to_luma(hr)
    if border:
        ys = ys[border:-border, border:-border]
        yh = yh[border:-border, border:-border]
    return ys, yh


def psnr_y(sr, hr, scale):
    """Peak signal-to-noise ratio (dB) on luma, shaving a scale-wide border.

    Identical images return math.inf.
    """
    ys, yh = _shaved_luma(sr, hr, scale)
    mse = float(np.mean((ys - yh) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2
    x = np.arange(size) - half
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


_SSIM_WINDOW = _gaussian_window()
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2


def ssim_y(sr, hr, scale):
    """Mean structural similarity on luma over valid 11x11 window positions."""
    ys, yh = _shaved_luma(sr, hr, scale)
    w = _SSIM_WINDOW

    def filt(a):
        return convolve2d(a, w, mode="valid")

    mu1, mu2 = filt(ys), filt(yh)
    mu1sq, mu2sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = filt(ys * ys) - mu1sq
    s2 = filt(yh * yh) - mu2sq
    s12 = filt(ys * yh) - mu12
    num = (2 * mu12 + _C1) * (2 * s12 + _C2)
    den = (mu1sq + mu2sq + _C1) * (s1 + s2 + _C2)
    return float(np.mean(num / den))
