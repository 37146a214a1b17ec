"""Patch-local association baseline.

The image is tiled into fixed patches (edge patches are truncated, never
padded) and every patch runs the association on its own crop with its own
local center grid, so no pixel can reach a center in another patch.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .hsi import FeatureMap, HsiCube, SpectralDerivative, pixel_coords
from .scpa import (AssociationMatrix, CenterSet, aggregate, associate_masked, init_center_grid,
                   make_centers, spatial_neighbors)

__all__ = ["patch_tiles", "patch_baseline_associate", "patch_iterative_baseline"]


def patch_tiles(height: int, width: int, patch_size: int) -> list[tuple[int, int, int, int]]:
    """``(r0, r1, c0, c1)`` for each patch in row-major order."""
    if patch_size < 1:
        raise InvalidInputError("patch_size must be >= 1")
    return [(r0, min(r0 + patch_size, height), c0, min(c0 + patch_size, width))
            for r0 in range(0, height, patch_size)
            for c0 in range(0, width, patch_size)]


def _crop(cube, deriv, features, tile):
    r0, r1, c0, c1 = tile
    return (HsiCube(cube.values[r0:r1, c0:c1]),
            SpectralDerivative(deriv.values[r0:r1, c0:c1]),
            FeatureMap(features.values[r0:r1, c0:c1]))


def _plan(cube, patch_size, centers_per_patch, mask_size):
    if centers_per_patch < 1:
        raise InvalidInputError("centers_per_patch must be >= 1")
    tiles = patch_tiles(cube.height, cube.width, patch_size)
    counts = [min(centers_per_patch, (t[1] - t[0]) * (t[3] - t[2])) for t in tiles]
    # one k for every pixel so the result stays a regular N x k association
    k = min(mask_size, min(counts))
    return tiles, counts, k


def _global_index(tile, width):
    r0, r1, c0, c1 = tile
    local = pixel_coords(r1 - r0, c1 - c0)
    return (local[:, 0] + r0) * width + (local[:, 1] + c0)


def _stack(parts):
    return CenterSet(
        coords=np.concatenate([c for c, _ in parts]),
        spectral=np.concatenate([p.spectral for _, p in parts]),
        derivative=np.concatenate([p.derivative for _, p in parts]),
        semantic=np.concatenate([p.semantic for _, p in parts]),
    )


def _run_patches(cube, deriv, features, patch_size, centers_per_patch, mask_size, iterations):
    if iterations < 1:
        raise InvalidInputError("iterations must be >= 1")
    tiles, counts, k = _plan(cube, patch_size, centers_per_patch, mask_size)
    n = cube.n_pixels
    nbr = np.empty((n, k), dtype=np.int64)
    wts = np.empty((n, k))
    dist = np.empty((n, k))
    sampled, updated = [], []
    offset = 0
    for tile, count in zip(tiles, counts):
        c_cube, c_deriv, c_feat = _crop(cube, deriv, features, tile)
        local = make_centers(init_center_grid(c_cube.height, c_cube.width, count),
                             c_cube, c_deriv, c_feat)
        shift = local.coords + np.array([tile[0], tile[2]])
        sampled.append((shift, local))
        local_nbr = spatial_neighbors(pixel_coords(c_cube.height, c_cube.width), local.coords, k)
        for _ in range(iterations):
            assoc = associate_masked(c_cube, c_deriv, c_feat, local, k, neighbors=local_nbr)
            local = local.with_semantic(aggregate(assoc, c_feat.flat(), local).features)
        updated.append((shift, local))
        rows = _global_index(tile, cube.width)
        nbr[rows] = assoc.centers + offset
        wts[rows] = assoc.weights
        dist[rows] = assoc.distances
        offset += count
    return AssociationMatrix(nbr, wts, dist, offset), _stack(sampled), _stack(updated)


def patch_baseline_associate(cube: HsiCube, deriv: SpectralDerivative, features: FeatureMap,
                             patch_size: int, centers_per_patch: int, mask_size: int = 9):
    """Single-pass patch-local association; returns ``(association, centers)``.

    Within each patch the association is exactly what the global path would
    compute on the cropped patch with a local center grid.  Indices in the
    result are image-global; patch p's centers follow those of patches < p.
    """
    assoc, centers, _ = _run_patches(cube, deriv, features, patch_size, centers_per_patch,
                                     mask_size, 1)
    return assoc, centers


def patch_iterative_baseline(cube: HsiCube, deriv: SpectralDerivative, features: FeatureMap,
                             patch_size: int, centers_per_patch: int, mask_size: int = 9,
                             iterations: int = 3):
    """Visit patches one after another, running ``iterations`` association +
    aggregation rounds in each.

    Returns ``(association, centers)``; the centers' semantic rows hold the
    final aggregated features and the association is from the last round.
    """
    assoc, _, centers = _run_patches(cube, deriv, features, patch_size, centers_per_patch,
                                     mask_size, iterations)
    return assoc, centers
