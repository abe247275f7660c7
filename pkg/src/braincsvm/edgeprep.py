"""Contour quantization, Sobel edges and the edge-differencing preprocessor."""
import math

import numpy as np

from .errors import InvalidArgumentError
from .imgcore import as_gray, filter2d, round_half_up

DEFAULT_LEVELS = 8

SOBEL_X = np.array([[-1, 0, 1],
                    [-2, 0, 2],
                    [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()

# Largest magnitude an 8-bit image can produce: |Gx|, |Gy| <= 4 * 255 each.
SOBEL_MAX = 1020.0 * math.sqrt(2.0)


def sobel_gradients(img):
    """Raw (Gx, Gy) responses as float arrays, reflect-padded."""
    img = as_gray(img)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise InvalidArgumentError(f"Sobel needs at least 3x3 pixels, got {img.shape[1]}x{img.shape[0]}")
    return filter2d(img, SOBEL_X), filter2d(img, SOBEL_Y)


def sobel(img):
    """Edge magnitude scaled so the largest possible response maps to 255."""
    gx, gy = sobel_gradients(img)
    magnitude = np.hypot(gx, gy)
    return round_half_up(magnitude * (255.0 / SOBEL_MAX))


def contour(img, levels=DEFAULT_LEVELS):
    """Quantize intensities into ``levels`` equal-width bands.

    Returns a per-pixel band index ``floor(v * levels / 256)``.
    """
    img = as_gray(img)
    if not 2 <= levels <= 256:
        raise InvalidArgumentError(f"levels must be in [2, 256], got {levels}")
    return (img.astype(np.int64) * levels // 256).astype(np.uint8)


def contour_image(levels_map, levels):
    """Spread a contour map over 0..255 for viewing as a PGM."""
    if levels < 2:
        raise InvalidArgumentError("levels must be >= 2")
    return round_half_up(levels_map.astype(np.float64) * 255.0 / (levels - 1))


def special_preprocess(img, levels=DEFAULT_LEVELS):
    """Subtract Sobel edges, then restore brightness where the contours disagree.

    ``diff = clamp(img - edges)``; at pixels where the contour band of the
    image differs from the contour band of the edge map, the brighter of
    ``diff`` and ``img`` is kept.
    """
    img = as_gray(img)
    edges = sobel(img)
    diff = np.clip(img.astype(np.int16) - edges.astype(np.int16), 0, 255).astype(np.uint8)
    mismatch = contour(img, levels) != contour(edges, levels)
    return np.where(mismatch, np.maximum(diff, img), diff)
