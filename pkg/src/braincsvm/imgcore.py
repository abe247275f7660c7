"""Grayscale images and the basic preprocessing chain.

Images are plain 2-D ``uint8`` numpy arrays of shape ``(height, width)``.
Every operation here is a pure function returning a new array.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

WORKING_SIZE = 150
DEFAULT_SIGMA = 1.0


def as_gray(img):
    """Validate ``img`` as a grayscale image and return it as a uint8 array."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidArgumentError("image is empty")
    if arr.dtype != np.uint8:
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("image contains non-finite values")
        if arr.min() < 0 or arr.max() > 255 or np.any(arr != np.round(arr)):
            raise InvalidArgumentError("intensities must be integers in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def round_half_up(values):
    """Round to nearest integer (ties upward) and clamp into [0, 255]."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def resize(img, out_w, out_h):
    """Bilinear resize to ``out_w`` x ``out_h``.

    Sample positions use pixel-center alignment, so each output pixel ``j``
    reads the source at ``(j + 0.5) * in / out - 0.5``, clamped to the
    valid range.  Equal target and source sizes give back the input.
    """
    img = as_gray(img)
    if out_w < 1 or out_h < 1:
        raise InvalidArgumentError(f"target size must be positive, got {out_w}x{out_h}")
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fy = axis_weights(in_h, out_h)
    c0, c1, fx = axis_weights(in_w, out_w)
    src = img.astype(np.float64)
    fy = fy[:, None]
    fx = fx[None, :]
    top = src[r0][:, c0] * (1 - fx) + src[r0][:, c1] * fx
    bottom = src[r1][:, c0] * (1 - fx) + src[r1][:, c1] * fx
    return round_half_up(top * (1 - fy) + bottom * fy)


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    radius: int
    weights: np.ndarray  # (2r+1, 2r+1), sums to 1

    @property
    def size(self):
        return 2 * self.radius + 1


def gaussian_kernel(sigma):
    """Sampled, normalized 2-D Gaussian truncated at ``ceil(3 sigma)``."""
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    radius = max(1, math.ceil(3 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    sq = offsets[:, None] ** 2 + offsets[None, :] ** 2
    w = np.exp(-sq / (2.0 * sigma * sigma))
    w /= w.sum()
    w.setflags(write=False)
    return GaussianKernel(sigma=float(sigma), radius=radius, weights=w)


def filter2d(img, weights):
    """Correlate a float image with ``weights`` using reflect padding.

    Accumulates one kernel tap at a time in row-major tap order, so each
    output pixel sees exactly the same floating-point summation sequence as
    a naive per-pixel loop over the footprint.
    """
    kh, kw = weights.shape
    ry, rx = kh // 2, kw // 2
    src = np.asarray(img, dtype=np.float64)
    padded = np.pad(src, ((ry, ry), (rx, rx)), mode="reflect")
    h, w = src.shape
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            out += weights[dy, dx] * padded[dy:dy + h, dx:dx + w]
    return out


def gaussian_blur(img, kernel):
    img = as_gray(img)
    return round_half_up(filter2d(img, kernel.weights))


def equalization_table(img):
    """The global intensity transform ``T`` tabulated at all 256 levels.

    Levels outside ``[g_min, g_max]`` are clamped to the nearest bound; they
    never occur in ``img`` itself.
    """
    img = as_gray(img)
    hist = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    g_min, g_max = int(img.min()), int(img.max())
    levels = np.arange(256, dtype=np.float64)
    if g_min == g_max:
        return levels.astype(np.uint8)
    cum = np.cumsum(hist)
    total = cum[g_max]
    table = g_min + (g_max - g_min) * (cum / total)
    table[:g_min] = g_min
    table[g_max:] = g_max
    return round_half_up(table)


def equalize(img):
    img = as_gray(img)
    if img.min() == img.max():
        return img.copy()
    return equalization_table(img)[img]


def basic_preprocess(img, sigma=DEFAULT_SIGMA, size=WORKING_SIZE):
    """Resize, denoise, then contrast-equalize."""
    out = resize(img, size, size)
    out = gaussian_blur(out, gaussian_kernel(sigma))
    return equalize(out)
