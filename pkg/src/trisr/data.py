"""Training data: procedural textures, dihedral augmentation, bicubic LR
synthesis, and PNG folder loading. Images are float arrays in [0, 1],
HR spatial dims exactly scale x LR dims.
"""

import functools
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image


def augment_image(img, mode):
    """Apply one of the 8 dihedral modes: (mode & 3) quarter-turns, then a
    horizontal flip if bit 2 is set. Mode 0 is the identity."""
    if not 0 <= mode <= 7:
        raise ValueError(f"augment mode must be in 0..7, got {mode}")
    out = np.rot90(img, k=mode & 3, axes=(0, 1))
    if mode & 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment_inverse_mode(mode):
    """The mode that undoes `mode` (the dihedral-group inverse)."""
    if mode & 4:
        return mode
    return (4 - (mode & 3)) % 4


@dataclass
class SamplePair:
    """LR patch and its aligned HR patch, both in [0, 1]."""

    lr: np.ndarray
    hr: np.ndarray

    def __post_init__(self):
        rh, rw = self.hr.shape[0], self.hr.shape[1]
        h, w = self.lr.shape[0], self.lr.shape[1]
        if rh % h or rw % w or rh // h != rw // w:
            raise ValueError(f"HR {self.hr.shape} is not an integer multiple of LR {self.lr.shape}")

    @property
    def scale(self):
        return self.hr.shape[0] // self.lr.shape[0]


def augment(pair, mode):
    """Same geometric transform applied to both halves of the pair."""
    return SamplePair(augment_image(pair.lr, mode), augment_image(pair.hr, mode))


# ---------------------------------------------------------------------------
# bicubic resampling


def _bicubic_kernel(t, a=-0.5):
    at = np.abs(t)
    w = np.zeros_like(at)
    m1 = at <= 1
    m2 = (at > 1) & (at < 2)
    w[m1] = (a + 2) * at[m1] ** 3 - (a + 3) * at[m1] ** 2 + 1
    w[m2] = a * at[m2] ** 3 - 5 * a * at[m2] ** 2 + 8 * a * at[m2] - 4 * a
    return w


@functools.lru_cache(maxsize=None)
def _resample_matrix(n_in, r):
    """(n_in/r, n_in) antialiased bicubic weights, rows normalized to 1.

    The kernel is stretched by the scale factor and sample positions are
    clamped at the edges.
    """
    n_out = n_in // r
    centers = (np.arange(n_out) + 0.5) * r - 0.5
    support = 2 * r
    mat = np.zeros((n_out, n_in))
    for o, c in enumerate(centers):
        lo = int(np.floor(c - support + 1))
        hi = int(np.floor(c + support))
        taps = np.arange(lo, hi + 1)
        w = _bicubic_kernel((taps - c) / r)
        w /= w.sum()
        np.add.at(mat[o], np.clip(taps, 0, n_in - 1), w)
    return mat


def bicubic_downscale(hr, r):
    """Separable antialiased bicubic downscale by integer factor r."""
    hr = np.asarray(hr, dtype=np.float64)
    if r == 1:
        return hr.copy()
    H, W = hr.shape[0], hr.shape[1]
    if H % r or W % r:
        raise ValueError(f"dims {H}x{W} not divisible by scale {r}")
    rows = _resample_matrix(H, r)
    cols = _resample_matrix(W, r)
    out = np.einsum("oi,ijc->ojc", rows, hr)
    return np.einsum("pj,ojc->opc", cols, out)


# ---------------------------------------------------------------------------
# image sources


def synthetic_image(seed, size=128):
    """One deterministic procedural texture: gradients, checkers, filtered
    noise and rings blended by seed."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    # smooth directional gradient per channel
    for c in range(3):
        th = rng.uniform(0, 2 * np.pi)
        img[..., c] = 0.5 + 0.4 * (np.cos(th) * xx + np.sin(th) * yy - 0.5)
    # checkerboard at a random cell size
    cell = int(rng.integers(4, 17))
    checker = ((np.arange(size)[:, None] // cell + np.arange(size)[None, :] // cell) % 2)
    img += 0.25 * (checker[..., None] - 0.5)
    # low-pass filtered noise (separable box blur, run twice)
    noise = rng.standard_normal((size, size, 3))
    k = 7
    kern = np.ones(k) / k
    for _ in range(2):
        noise = np.apply_along_axis(lambda v: np.convolve(v, kern, mode="same"), 0, noise)
        noise = np.apply_along_axis(lambda v: np.convolve(v, kern, mode="same"), 1, noise)
    img += 0.6 * noise
    # concentric rings
    cx, cy = rng.uniform(0.2, 0.8, size=2)
    rr = np.hypot(xx - cx, yy - cy)
    img += 0.15 * np.sin(2 * np.pi * rr * rng.uniform(4, 12))[..., None]
    return np.clip(img, 0.0, 1.0)


def synthetic_images(seed, count, size=128):
    return [synthetic_image(seed * 1000 + i, size) for i in range(count)]


def smooth_texture(seed, size=128):
    """Band-limited texture (gradients, rings, soft noise), no hard edges.

    Survives bicubic downscaling mostly intact, which makes it the right
    target for upscaler overfit sanity runs.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        th = rng.uniform(0, 2 * np.pi)
        img[..., c] = 0.5 + 0.35 * (np.cos(th) * xx + np.sin(th) * yy - 0.5)
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    rr = np.hypot(xx - cx, yy - cy)
    img += 0.2 * np.sin(2 * np.pi * rr * 6)[..., None]
    noise = rng.standard_normal((size, size, 3))
    k = np.ones(9) / 9
    for _ in range(2):
        noise = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 0, noise)
        noise = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 1, noise)
    img += 0.25 * noise
    return np.clip(img, 0.02, 0.98)


def load_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_png(path, img):
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def load_folder(folder):
    """All PNGs in a folder, sorted by name, as HR images."""
    names = sorted(n for n in os.listdir(folder) if n.lower().endswith(".png"))
    if not names:
        raise ValueError(f"no .png files in {folder}")
    return [load_png(os.path.join(folder, n)) for n in names], names


class PatchSampler:
    """Deterministic sampler: random HR crop, dihedral augment, bicubic LR."""

    def __init__(self, images, patch_lr, scale, seed, augment_modes=True):
        self.images = images
        self.patch = patch_lr
        self.scale = scale
        self.rng = np.random.default_rng(seed)
        self.augment_modes = augment_modes
        hr_patch = patch_lr * scale
        for i, im in enumerate(self.images):
            if im.shape[0] < hr_patch or im.shape[1] < hr_patch:
                raise ValueError(f"image {i} {im.shape} smaller than HR patch {hr_patch}")

    def sample(self):
        img = self.images[self.rng.integers(len(self.images))]
        hp = self.patch * self.scale
        i = int(self.rng.integers(img.shape[0] - hp + 1))
        j = int(self.rng.integers(img.shape[1] - hp + 1))
        hr = img[i : i + hp, j : j + hp]
        if self.augment_modes:
            hr = augment_image(hr, int(self.rng.integers(8)))
        lr = bicubic_downscale(hr, self.scale)
        return SamplePair(lr, np.asarray(hr, dtype=np.float64))

    def batch(self, n):
        pairs = [self.sample() for _ in range(n)]
        lr = np.stack([p.lr for p in pairs])
        hr = np.stack([p.hr for p in pairs])
        return lr, hr
