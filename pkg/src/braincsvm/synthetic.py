"""Synthetic fixtures: brain-like phantom images and 2-D point clouds."""
import numpy as np

from .imgcore import round_half_up

LABELS = ("normal", "benign", "malignant")


def _smooth_noise(rng, size, scale):
    # low-frequency texture: bilinear upsampling of a coarse random grid
    coarse = rng.normal(0.0, 1.0, (6, 6))
    pos = np.linspace(0, 5, size)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, 5)
    f = pos - lo
    rows = coarse[lo] * (1 - f)[:, None] + coarse[hi] * f[:, None]
    return scale * (rows[:, lo] * (1 - f)[None, :] + rows[:, hi] * f[None, :])


def phantom(label, size=150, seed=0):
    """One grayscale phantom of the given class.

    Every phantom has an elliptical "brain" on a dark background.  Benign
    adds one smooth, round bright lesion; malignant adds an irregular,
    ring-enhancing lesion with a dark core.
    """
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = size / 2
    ry, rx = size * rng.uniform(0.38, 0.44), size * rng.uniform(0.32, 0.38)
    inside = ((yy - c) / ry) ** 2 + ((xx - c) / rx) ** 2
    img = np.full((size, size), 12.0)
    brain = inside <= 1.0
    img[brain] = 105.0 + _smooth_noise(rng, size, 10.0)[brain]
    # bright rim standing in for the skull boundary
    img[(inside > 1.0) & (inside <= 1.15)] = 150.0

    if label != "normal":
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.0, 0.45)
        ly = c + dist * ry * np.sin(ang)
        lx = c + dist * rx * np.cos(ang)
        rad = size * rng.uniform(0.07, 0.11)
        d = np.hypot(yy - ly, xx - lx)
        if label == "benign":
            img = np.where(d <= rad, 205.0 - 25.0 * (d / rad) ** 2, img)
        else:
            theta = np.arctan2(yy - ly, xx - lx)
            wobble = 1.0 + 0.3 * np.sin(3 * theta + rng.uniform(0, 6.3)) + 0.15 * np.sin(7 * theta)
            edge = rad * wobble
            img = np.where(d <= edge, 215.0, img)
            img = np.where(d <= 0.55 * edge, 55.0, img)

    img += rng.normal(0.0, 5.0, img.shape)
    return round_half_up(img)


def phantom_set(per_class, size=150, seed=0, labels=LABELS):
    """``per_class`` phantoms of each label as ``(image, label, id)`` tuples."""
    out = []
    for k, label in enumerate(labels):
        for i in range(per_class):
            img = phantom(label, size=size, seed=seed * 100_003 + k * 10_007 + i)
            out.append((img, label, f"{label}_{i:03d}.png"))
    return out


def overlapping_blobs(n, positive_fraction=0.3, separation=1.5, dim=2, seed=0):
    """Two Gaussian clouds (unit covariance) whose means sit ``separation`` apart.

    Returns ``(X, y)`` with labels in {+1, -1}; +1 is the minority class.
    """
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * positive_fraction))
    y = np.concatenate([np.ones(n_pos), -np.ones(n - n_pos)])
    X = rng.normal(0.0, 1.0, (n, dim))
    X[:, 0] += np.where(y > 0, separation / 2, -separation / 2)
    order = rng.permutation(n)
    return X[order], y[order].astype(int)
