"""Seeded synthetic cubes with known class layouts, for tests and demos."""

from __future__ import annotations

import numpy as np

from .hsi import HsiCube, LabelMap

__all__ = ["class_spectra", "region_cube", "separable_cube", "two_region_cube", "random_cube",
           "straddling_region_cube"]


def class_spectra(n_classes: int, bands: int) -> np.ndarray:
    """Well separated prototype spectra in [0, 1], one row per class.

    Rows cycle through rising, falling and peaked shapes, shifted in level
    when there are more than three classes.
    """
    t = np.linspace(0.0, 1.0, bands)
    shapes = [t, 1.0 - t, 1.0 - np.abs(2.0 * t - 1.0)]
    out = np.empty((n_classes, bands))
    for c in range(n_classes):
        base = shapes[c % 3]
        lift = 0.25 * (c // 3)
        out[c] = 0.1 + 0.8 * base * (1.0 - lift) + lift
    return out


def region_cube(labels, spectra, noise: float = 0.0, seed: int = 0) -> HsiCube:
    """Fill each labeled region (1-based) with its class spectrum plus Gaussian noise."""
    lab = np.asarray(labels)
    spec = np.asarray(spectra, dtype=np.float64)
    values = spec[lab - 1]
    if noise > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise, size=values.shape)
    return HsiCube(values)


def separable_cube(seed: int = 0, height: int = 32, width: int = 32, bands: int = 8,
                   n_classes: int = 3, noise: float = 0.01, amplitude: float = 2.0):
    """Cube split into 2 x 2 quadrants with distinct class spectra.

    Quadrant ``(i, j)`` holds class ``(2i + j) % n_classes + 1``, so with three
    classes the layout is ``[[1, 2], [3, 1]]``.  The vertical boundary is
    jittered per row by up to one pixel.  Spectra are the prototypes of
    :func:`class_spectra` scaled by ``amplitude``.  Returns ``(cube, label_map)``.
    """
    rng = np.random.default_rng(seed)
    tile = (2 * np.arange(2)[:, None] + np.arange(2)[None, :]) % n_classes + 1
    labels = np.empty((height, width), dtype=np.int64)
    cols = np.arange(width)
    for r in range(height):
        edge = width // 2 + rng.integers(-1, 2)
        labels[r] = tile[int(r >= height // 2), (cols >= edge).astype(int)]
    cube = region_cube(labels, amplitude * class_spectra(n_classes, bands), noise, seed + 1)
    return cube, LabelMap(labels, n_classes)


def two_region_cube(height: int = 8, width: int = 8, bands: int = 4, split: int | None = None):
    """Left/right halves with two clearly different spectra; returns ``(cube, label_map)``."""
    split = width // 2 if split is None else split
    labels = np.where(np.arange(width)[None, :] < split, 1, 2).repeat(height, axis=0)
    return region_cube(labels, class_spectra(2, bands)), LabelMap(labels, 2)


def random_cube(height: int, width: int, bands: int, seed: int = 0) -> HsiCube:
    return HsiCube(np.random.default_rng(seed).uniform(0.0, 1.0, size=(height, width, bands)))


def straddling_region_cube(size: int = 24, region: int = 7, bands: int = 6, seed: int = 0):
    """Random background with a uniform square centered on the image midpoint.

    With an even ``size`` the square straddles both midlines, so a patch
    size of ``size // 2`` cuts it into four pieces.  Returns ``(cube, mask)``.
    """
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.0, 1.0, size=(size, size, bands))
    lo = size // 2 - region // 2
    mask = np.zeros((size, size), dtype=bool)
    mask[lo:lo + region, lo:lo + region] = True
    values[mask] = 2.0 + class_spectra(1, bands)[0]
    return HsiCube(values), mask
