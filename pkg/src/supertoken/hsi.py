"""Hyperspectral cube data model, spectral derivatives and semantic features.

Arrays are stored row-major by pixel with the band (or channel) axis fastest,
i.e. ``values[row, col, band]``.  All containers are frozen; the arrays they
hold are marked read-only on construction.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError

__all__ = [
    "HsiCube",
    "LabelMap",
    "SpectralDerivative",
    "FeatureMap",
    "FeatureProvider",
    "PcaFeatureProvider",
    "spectral_derivative",
    "pca_feature_provider",
    "sample_at",
    "pixel_coords",
]


def _frozen(values, dtype):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class _Grid:
    """Shared accessors for H x W x D pixel grids."""

    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def depth(self) -> int:
        return self.values.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def flat(self) -> np.ndarray:
        """Return the N x D matrix of per-pixel vectors in row-major pixel order."""
        return self.values.reshape(self.n_pixels, self.depth)


@dataclass(frozen=True, eq=False)
class HsiCube(_Grid):
    """H x W x B reflectance volume."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3:
            raise InvalidInputError(f"cube must be 3-D (H, W, B), got shape {arr.shape}")
        h, w, b = arr.shape
        if h < 1 or w < 1:
            raise InvalidInputError("cube needs at least one pixel")
        if b < 2:
            raise InvalidInputError(f"cube needs at least 2 bands, got {b}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("cube contains non-finite values")
        object.__setattr__(self, "values", _frozen(arr, np.float64))

    @property
    def bands(self) -> int:
        return self.depth


@dataclass(frozen=True, eq=False)
class SpectralDerivative(_Grid):
    """Forward band differences of a cube, H x W x (B-1)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise InvalidInputError(f"derivative must be H x W x (B-1), got {arr.shape}")
        object.__setattr__(self, "values", _frozen(arr, np.float64))

    @property
    def bands(self) -> int:
        return self.depth


@dataclass(frozen=True, eq=False)
class FeatureMap(_Grid):
    """Per-pixel semantic feature vectors, H x W x C1."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise InvalidInputError(f"feature map must be H x W x C1 with C1 >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("feature map contains non-finite values")
        object.__setattr__(self, "values", _frozen(arr, np.float64))

    @property
    def channels(self) -> int:
        return self.depth


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class indices; 0 marks unlabeled pixels, 1..C are classes."""

    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise InvalidInputError(f"label map must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > self.class_count):
            raise InvalidInputError(f"labels must lie in 0..{self.class_count}")
        object.__setattr__(self, "labels", _frozen(arr, np.int64))
        object.__setattr__(self, "class_count", int(self.class_count))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def spectral_derivative(cube: HsiCube) -> SpectralDerivative:
    """Difference of adjacent bands: ``out[..., i] = cube[..., i+1] - cube[..., i]``."""
    if cube.bands < 2:
        raise InvalidInputError("spectral derivative needs at least 2 bands")
    v = cube.values
    return SpectralDerivative(v[:, :, 1:] - v[:, :, :-1])


class FeatureProvider(abc.ABC):
    """Deterministic mapping from a cube to a semantic feature map."""

    channels: int

    @abc.abstractmethod
    def __call__(self, cube: HsiCube) -> FeatureMap:
        ...


@dataclass(frozen=True)
class PcaFeatureProvider(FeatureProvider):
    """Box-smoothed spectra projected onto their leading principal components."""

    channels: int
    smoothing_radius: int = 1

    def __call__(self, cube: HsiCube) -> FeatureMap:
        return pca_feature_provider(cube, self.channels, self.smoothing_radius)


def _principal_axes(x: np.ndarray, n: int) -> np.ndarray:
    """Top-``n`` eigenvectors of the covariance of ``x`` (rows = samples), B x n."""
    centered = x - x.mean(axis=0)
    # einsum avoids BLAS so the result does not depend on the BLAS thread count
    cov = np.einsum("ni,nj->ij", centered, centered) / max(len(x) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:n]
    axes = evecs[:, order]
    # sign convention: each axis's largest-magnitude entry is positive
    pivot = np.argmax(np.abs(axes), axis=0)
    signs = np.sign(axes[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    return axes * signs


def pca_feature_provider(cube: HsiCube, channels: int, smoothing_radius: int = 1) -> FeatureMap:
    """Smoothed-PCA stand-in for a learned semantic feature extractor.

    Each band is box-averaged over a ``(2r+1) x (2r+1)`` window with edge
    replication, then every smoothed spectrum is centered and projected onto
    the top ``channels`` principal components of the smoothed spectra.
    """
    if channels < 1 or channels > cube.bands:
        raise InvalidInputError(f"channels must be in 1..{cube.bands}, got {channels}")
    if smoothing_radius < 0:
        raise InvalidInputError("smoothing_radius must be >= 0")
    v = cube.values
    if smoothing_radius > 0:
        size = 2 * smoothing_radius + 1
        v = ndimage.uniform_filter(v, size=(size, size, 1), mode="nearest")
    x = v.reshape(-1, cube.bands)
    axes = _principal_axes(x, channels)
    proj = np.einsum("nb,bc->nc", x - x.mean(axis=0), axes)
    return FeatureMap(proj.reshape(cube.height, cube.width, channels))


def pixel_coords(height: int, width: int) -> np.ndarray:
    """All (row, col) pixel positions in row-major order, N x 2 int64."""
    rows, cols = np.divmod(np.arange(height * width, dtype=np.int64), width)
    return np.stack([rows, cols], axis=1)


def sample_at(coords, source) -> np.ndarray:
    """Nearest-pixel lookup of per-pixel vectors at integer coordinates.

    Returns an M x D matrix whose row m is ``source.values[r_m, c_m, :]``.
    """
    c = np.asarray(coords)
    if c.ndim != 2 or c.shape[1] != 2:
        raise InvalidInputError(f"coords must be M x 2, got shape {c.shape}")
    if c.size and not np.issubdtype(c.dtype, np.integer):
        if not np.all(c == np.round(c)):
            raise InvalidInputError("coords must be integer pixel positions")
        c = c.astype(np.int64)
    r, col = c[:, 0], c[:, 1]
    if np.any(r < 0) or np.any(r >= source.height) or np.any(col < 0) or np.any(col >= source.width):
        raise InvalidInputError("coordinate outside the image")
    return np.array(source.values[r, col, :])
