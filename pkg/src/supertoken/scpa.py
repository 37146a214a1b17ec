"""Global pixel-to-center association and supertoken aggregation.

Every pixel is scored against candidate centers with a normalized sum of
squared distances over spatial position, raw spectrum, spectral derivative
and semantic features.  Affinities are ``exp(-D)`` restricted to each pixel's
``k`` spatially nearest centers, and each center aggregates the semantic
features of the pixels that kept it.

The production path (:func:`associate_masked`) never materializes the dense
N x M distance matrix; :func:`spatial_distance`, :func:`feature_distance` and
:func:`associate` are the dense reference path and produce bit-identical
values on the kept entries.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError, InvalidStateError
from .hsi import FeatureMap, HsiCube, SpectralDerivative, pixel_coords, sample_at

__all__ = [
    "CenterSet",
    "DistanceMatrix",
    "AssociationMatrix",
    "SupertokenSet",
    "init_center_grid",
    "make_centers",
    "spatial_distance",
    "feature_distance",
    "distance_matrix",
    "spatial_neighbors",
    "associate",
    "associate_masked",
    "aggregate",
    "scpa_block",
    "scpa_group",
]

# pixels per work unit; fixed so results do not depend on the thread count
CHUNK = 4096


@dataclass(frozen=True, eq=False)
class CenterSet:
    """Cluster centers: integer coordinates plus sampled feature rows."""

    coords: np.ndarray  # M x 2 int64
    spectral: np.ndarray  # M x B
    derivative: np.ndarray  # M x (B-1)
    semantic: np.ndarray  # M x C1

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        m = len(coords)
        rows = {}
        for name in ("spectral", "derivative", "semantic"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != m:
                raise InvalidInputError(f"{name} must have {m} rows, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} rows must be finite")
            rows[name] = arr
        if len(np.unique(coords, axis=0)) != m:
            raise InvalidInputError("center coordinates must be pairwise distinct")
        object.__setattr__(self, "coords", coords)
        for name, arr in rows.items():
            object.__setattr__(self, name, arr)

    @property
    def count(self) -> int:
        return len(self.coords)

    def with_semantic(self, semantic: np.ndarray) -> "CenterSet":
        return replace(self, semantic=semantic)

    def subset(self, indices) -> "CenterSet":
        idx = np.asarray(indices, dtype=np.int64)
        return CenterSet(self.coords[idx], self.spectral[idx], self.derivative[idx], self.semantic[idx])


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Dense N x M multi-criteria distances with their spatial/feature split."""

    total: np.ndarray
    spatial: np.ndarray | None = None
    feature: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class AssociationMatrix:
    """Sparse pixel-to-center affinities, ``k`` stored entries per pixel.

    ``centers[n]`` lists pixel n's k spatially nearest centers ordered by
    spatial distance (ties by lower center index); ``weights[n, j]`` is
    ``exp(-distances[n, j])``.  Entries not listed are zero.
    """

    centers: np.ndarray  # N x k int64
    weights: np.ndarray  # N x k
    distances: np.ndarray  # N x k
    n_centers: int

    @property
    def n_pixels(self) -> int:
        return self.centers.shape[0]

    @property
    def mask_size(self) -> int:
        return self.centers.shape[1]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_pixels, self.n_centers))
        rows = np.repeat(np.arange(self.n_pixels), self.mask_size)
        dense[rows, self.centers.ravel()] = self.weights.ravel()
        return dense


@dataclass(frozen=True, eq=False)
class SupertokenSet:
    """Aggregated token features with per-token provenance.

    Provenance is stored CSR-style: the contributions of token m are
    ``pixels[ptr[m]:ptr[m+1]]`` with ``weights[ptr[m]:ptr[m+1]]``, pixel
    indices ascending.
    """

    features: np.ndarray  # M x C1
    center_coords: np.ndarray  # M x 2
    ptr: np.ndarray
    pixels: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return len(self.features)

    def provenance(self, m: int) -> list[tuple[int, float]]:
        lo, hi = self.ptr[m], self.ptr[m + 1]
        return list(zip(self.pixels[lo:hi].tolist(), self.weights[lo:hi].tolist()))


def init_center_grid(height: int, width: int, count: int) -> np.ndarray:
    """Place ``count`` centers on a near-uniform grid; returns M x 2 int64.

    The grid has ``g_r = round(sqrt(M*H/W))`` rows (clamped to [1, H]) and
    ``g_c = ceil(M/g_r)`` columns (clamped to [1, W]); centers occupy the
    first M cells in row-major order, each at the floor of its cell midpoint.
    """
    if height < 1 or width < 1:
        raise InvalidInputError("image must have at least one pixel")
    if count < 1 or count > height * width:
        raise InvalidInputError(f"center count must be in 1..{height * width}, got {count}")
    g_r = min(max(int(round(math.sqrt(count * height / width))), 1), height)
    g_c = min(max(math.ceil(count / g_r), 1), width)
    while g_r * g_c < count:
        # only reachable when the column clamp bites; rows still fit since M <= H*W
        g_r += 1
        g_c = min(max(math.ceil(count / g_r), 1), width)
    cell = np.arange(count)
    i, j = np.divmod(cell, g_c)
    rows = np.floor((i + 0.5) * height / g_r).astype(np.int64)
    cols = np.floor((j + 0.5) * width / g_c).astype(np.int64)
    return np.stack([rows, cols], axis=1)


def make_centers(coords, cube: HsiCube, deriv: SpectralDerivative, features: FeatureMap) -> CenterSet:
    """Sample spectral, derivative and semantic rows at the given coordinates."""
    return CenterSet(
        coords=np.asarray(coords, dtype=np.int64),
        spectral=sample_at(coords, cube),
        derivative=sample_at(coords, deriv),
        semantic=sample_at(coords, features),
    )


def _sq_int_dist(pix: np.ndarray, ctr: np.ndarray) -> np.ndarray:
    dr = pix[:, None, 0] - ctr[None, :, 0]
    dc = pix[:, None, 1] - ctr[None, :, 1]
    return dr * dr + dc * dc


def spatial_distance(pixel_coords, center_coords, height: int, width: int) -> np.ndarray:
    """Squared Euclidean coordinate distance divided by ``max(H, W)``, N x M."""
    pix = np.asarray(pixel_coords, dtype=np.int64).reshape(-1, 2)
    ctr = np.asarray(center_coords, dtype=np.int64).reshape(-1, 2)
    for arr in (pix, ctr):
        if arr.size and (arr[:, 0].min() < 0 or arr[:, 0].max() >= height
                         or arr[:, 1].min() < 0 or arr[:, 1].max() >= width):
            raise InvalidInputError("coordinate outside the image")
    return _sq_int_dist(pix, ctr) / max(height, width)


def _sq_norm(diff: np.ndarray) -> np.ndarray:
    return np.sum(diff * diff, axis=-1)


def _feature_terms(spec_d, deriv_d, sem_d) -> np.ndarray:
    b = spec_d.shape[-1]
    return (
        _sq_norm(spec_d) / math.sqrt(b)
        + _sq_norm(deriv_d) / math.sqrt(deriv_d.shape[-1])
        + _sq_norm(sem_d) / math.sqrt(sem_d.shape[-1])
    )


def _check_feature_dims(spectra, derivs, sem, centers: CenterSet):
    n = len(spectra)
    if len(derivs) != n or len(sem) != n:
        raise InvalidInputError("pixel feature matrices must have the same number of rows")
    if spectra.shape[1] != centers.spectral.shape[1]:
        raise InvalidInputError("spectral dimension mismatch between pixels and centers")
    if derivs.shape[1] != centers.derivative.shape[1]:
        raise InvalidInputError("derivative dimension mismatch between pixels and centers")
    if derivs.shape[1] != spectra.shape[1] - 1:
        raise InvalidInputError("derivative must have one band fewer than the spectrum")
    if sem.shape[1] != centers.semantic.shape[1]:
        raise InvalidInputError("semantic dimension mismatch between pixels and centers")


def feature_distance(pixel_spectra, pixel_derivs, pixel_sem, centers: CenterSet) -> np.ndarray:
    """Dense N x M feature distance.

    ``|x - x_c|^2 / sqrt(B) + |x' - x'_c|^2 / sqrt(B-1) + |f - f_c|^2 / sqrt(C1)``
    """
    spectra = np.asarray(pixel_spectra, dtype=np.float64)
    derivs = np.asarray(pixel_derivs, dtype=np.float64)
    sem = np.asarray(pixel_sem, dtype=np.float64)
    _check_feature_dims(spectra, derivs, sem, centers)
    out = np.empty((len(spectra), centers.count))
    for lo in range(0, len(spectra), CHUNK):
        sl = slice(lo, lo + CHUNK)
        out[sl] = _feature_terms(
            spectra[sl, None, :] - centers.spectral[None, :, :],
            derivs[sl, None, :] - centers.derivative[None, :, :],
            sem[sl, None, :] - centers.semantic[None, :, :],
        )
    return out


def distance_matrix(cube: HsiCube, deriv: SpectralDerivative, features: FeatureMap,
                    centers: CenterSet) -> DistanceMatrix:
    """Dense distance matrix over every pixel of the image (reference path)."""
    spa = spatial_distance(pixel_coords(cube.height, cube.width), centers.coords,
                           cube.height, cube.width)
    feat = feature_distance(cube.flat(), deriv.flat(), features.flat(), centers)
    return DistanceMatrix(total=spa + feat, spatial=spa, feature=feat)


def _brute_neighbors(pix: np.ndarray, ctr: np.ndarray, k: int) -> np.ndarray:
    m = len(ctr)
    idx = np.arange(m, dtype=np.int64)
    out = np.empty((len(pix), k), dtype=np.int64)
    for lo in range(0, len(pix), CHUNK):
        # unique sort key: distance first, center index second
        key = _sq_int_dist(pix[lo:lo + CHUNK], ctr) * m + idx
        if k < m:
            part = np.argpartition(key, k - 1, axis=1)[:, :k]
            key = np.take_along_axis(key, part, axis=1)
        out[lo:lo + CHUNK] = np.sort(key, axis=1) % m
    return out


def spatial_neighbors(pixel_coords, center_coords, k: int, *, method: str = "auto") -> np.ndarray:
    """Indices of each pixel's ``k`` spatially nearest centers, N x k.

    Rows are ordered by increasing distance; equal distances go to the lower
    center index.  Distances are compared as exact integers.  ``method`` is
    ``"brute"`` (full N x M scan), ``"tree"`` (KD-tree candidates, exact tie
    resolution) or ``"auto"``; all three return identical results.
    """
    pix = np.asarray(pixel_coords, dtype=np.int64).reshape(-1, 2)
    ctr = np.asarray(center_coords, dtype=np.int64).reshape(-1, 2)
    m = len(ctr)
    if k < 1 or k > m:
        raise InvalidInputError(f"mask size must be in 1..{m}, got {k}")
    if method == "auto":
        method = "tree" if m > 4 * k + 8 else "brute"
    if method == "brute":
        return _brute_neighbors(pix, ctr, k)
    if method != "tree":
        raise InvalidInputError(f"unknown neighbor method {method!r}")
    kq = min(m, 2 * k + 4)
    _, cand = cKDTree(ctr).query(pix, k=kq)
    d2 = _sq_int_dist_pairs(pix, ctr, cand)
    key = d2 * m + cand
    key.sort(axis=1)
    out = key[:, :k] % m
    # the candidates are exact unless the k-th distance ties with the farthest candidate
    kth = key[:, k - 1] // m
    unsafe = np.flatnonzero(key[:, -1] // m <= kth) if kq < m else np.empty(0, dtype=np.int64)
    if len(unsafe):
        out[unsafe] = _brute_neighbors(pix[unsafe], ctr, k)
    return out


def _sq_int_dist_pairs(pix, ctr, cand):
    dr = pix[:, None, 0] - ctr[cand, 0]
    dc = pix[:, None, 1] - ctr[cand, 1]
    return dr * dr + dc * dc


def associate(distance, mask_size: int, pixel_coords, center_coords) -> AssociationMatrix:
    """Mask a dense distance matrix to each pixel's k nearest centers and exponentiate."""
    total = distance.total if isinstance(distance, DistanceMatrix) else np.asarray(distance)
    m = total.shape[1]
    if mask_size < 1 or mask_size > m:
        raise InvalidInputError(f"mask size must be in 1..{m}, got {mask_size}")
    nbr = spatial_neighbors(pixel_coords, center_coords, mask_size)
    d = np.take_along_axis(total, nbr, axis=1)
    return AssociationMatrix(centers=nbr, weights=np.exp(-d), distances=d, n_centers=m)


def _masked_chunk(lo, hi, pix, spectra, derivs, sem, centers, nbr, norm):
    sl = slice(lo, hi)
    c = nbr[sl]
    dr = pix[sl, None, 0] - centers.coords[c, 0]
    dc = pix[sl, None, 1] - centers.coords[c, 1]
    spa = (dr * dr + dc * dc) / norm
    feat = _feature_terms(
        spectra[sl, None, :] - centers.spectral[c],
        derivs[sl, None, :] - centers.derivative[c],
        sem[sl, None, :] - centers.semantic[c],
    )
    return spa + feat


def associate_masked(cube: HsiCube, deriv: SpectralDerivative, features: FeatureMap,
                     centers: CenterSet, mask_size: int, *, neighbors=None,
                     threads: int = 1) -> AssociationMatrix:
    """Sparse association evaluated only on each pixel's k nearest centers.

    ``neighbors`` may carry a precomputed :func:`spatial_neighbors` result;
    center coordinates never move within a group so it can be reused.
    """
    if mask_size < 1 or mask_size > centers.count:
        raise InvalidInputError(f"mask size must be in 1..{centers.count}, got {mask_size}")
    spectra, derivs, sem = cube.flat(), deriv.flat(), features.flat()
    _check_feature_dims(spectra, derivs, sem, centers)
    pix = pixel_coords(cube.height, cube.width)
    nbr = spatial_neighbors(pix, centers.coords, mask_size) if neighbors is None else neighbors
    if nbr.shape != (len(pix), mask_size):
        raise InvalidInputError("precomputed neighbors do not match the image and mask size")
    norm = max(cube.height, cube.width)
    d = np.empty(nbr.shape)
    bounds = [(lo, min(lo + CHUNK, len(pix))) for lo in range(0, len(pix), CHUNK)]

    def work(b):
        d[b[0]:b[1]] = _masked_chunk(b[0], b[1], pix, spectra, derivs, sem, centers, nbr, norm)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, bounds))
    else:
        for b in bounds:
            work(b)
    return AssociationMatrix(centers=nbr, weights=np.exp(-d), distances=d, n_centers=centers.count)


def aggregate(assoc: AssociationMatrix, pixel_sem, centers: CenterSet) -> SupertokenSet:
    """Anchor-weighted mean ``s = (p + sum a_i f_i) / (1 + sum a_i)`` per center.

    Sums run over pixels in ascending index order.
    """
    sem = np.asarray(pixel_sem, dtype=np.float64)
    m = centers.count
    if assoc.n_centers != m or assoc.n_pixels != len(sem):
        raise InvalidInputError("association does not match the pixel features or centers")
    if sem.shape[1] != centers.semantic.shape[1]:
        raise InvalidInputError("semantic dimension mismatch")
    k = assoc.mask_size
    tok = assoc.centers.ravel()
    w = assoc.weights.ravel()
    pix = np.repeat(np.arange(assoc.n_pixels), k)
    den = 1.0 + np.bincount(tok, weights=w, minlength=m)
    num = centers.semantic.copy()
    for ch in range(sem.shape[1]):
        num[:, ch] += np.bincount(tok, weights=w * sem[pix, ch], minlength=m)
    feats = num / den[:, None]

    keep = w > 0
    order = np.argsort(tok[keep], kind="stable")
    counts = np.bincount(tok[keep], minlength=m)
    ptr = np.concatenate([[0], np.cumsum(counts)])
    return SupertokenSet(
        features=feats,
        center_coords=centers.coords.copy(),
        ptr=ptr,
        pixels=pix[keep][order],
        weights=w[keep][order],
    )


def scpa_block(cube: HsiCube, deriv: SpectralDerivative, features: FeatureMap,
               centers: CenterSet, mask_size: int, *, neighbors=None, threads: int = 1):
    """One association + aggregation pass.

    Returns ``(tokens, association, updated_centers)`` where the updated
    centers carry the token features as their semantic rows and keep their
    coordinates, spectra and derivatives.
    """
    assoc = associate_masked(cube, deriv, features, centers, mask_size,
                             neighbors=neighbors, threads=threads)
    tokens = aggregate(assoc, features.flat(), centers)
    if not np.all(np.isfinite(tokens.features)):
        raise InvalidStateError("aggregated token features are not finite")
    return tokens, assoc, centers.with_semantic(tokens.features)


def scpa_group(cube: HsiCube, deriv: SpectralDerivative, features: FeatureMap,
               centers: CenterSet, mask_size: int, repeats: int, *, threads: int = 1):
    """Apply :func:`scpa_block` ``repeats`` times, reusing the spatial mask."""
    if repeats < 1:
        raise InvalidInputError("repeats must be >= 1")
    nbr = spatial_neighbors(pixel_coords(cube.height, cube.width), centers.coords, mask_size)
    tokens = assoc = None
    for _ in range(repeats):
        tokens, assoc, centers = scpa_block(cube, deriv, features, centers, mask_size,
                                            neighbors=nbr, threads=threads)
    return tokens, assoc, centers
