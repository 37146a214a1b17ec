"""Center filtering by local density and isolation from denser centers.

Each center gets a density ``rho = exp(-mean of squared distances to its K
nearest other centers)`` and an isolation ``eta`` equal to its distance to
the nearest strictly denser center (or, for density peaks, its largest
distance to any other center).  The ``keep`` centers with the largest
``rho * eta`` survive unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .scpa import CenterSet, SupertokenSet, _feature_terms, spatial_distance

__all__ = [
    "FilterResult",
    "center_distances",
    "center_distance_matrix",
    "local_density",
    "isolation",
    "select_top",
    "filter_centers",
    "separation_loss",
    "separation_loss_grad",
]


@dataclass(frozen=True, eq=False)
class FilterResult:
    kept_indices: np.ndarray  # sorted by descending score, ties by lower index
    scores: np.ndarray
    density: np.ndarray
    isolation: np.ndarray
    distances: np.ndarray  # M x M center-to-center matrix
    separation: float  # d_e over the kept semantic rows
    loss: float  # 1 / separation


def center_distances(coords, spectral, derivative, semantic, height: int, width: int) -> np.ndarray:
    """Multi-criteria distance between raw center rows, M x M.

    Unlike :class:`CenterSet` this accepts coincident centers, which is
    useful when probing the filter with duplicated rows.
    """
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    spec = np.asarray(spectral, dtype=np.float64)
    der = np.asarray(derivative, dtype=np.float64)
    sem = np.asarray(semantic, dtype=np.float64)
    m = len(c)
    if m < 2:
        raise InvalidInputError("need at least 2 centers")
    if not (len(spec) == len(der) == len(sem) == m):
        raise InvalidInputError("center rows disagree in count")
    spa = spatial_distance(c, c, height, width)
    feat = _feature_terms(spec[:, None, :] - spec[None], der[:, None, :] - der[None],
                          sem[:, None, :] - sem[None])
    d = spa + feat
    np.fill_diagonal(d, 0.0)
    return d


def center_distance_matrix(centers: CenterSet, height: int, width: int) -> np.ndarray:
    """Center-to-center multi-criteria distance (spatial + feature terms), M x M."""
    return center_distances(centers.coords, centers.spectral, centers.derivative,
                            centers.semantic, height, width)


def _off_diagonal(d: np.ndarray) -> np.ndarray:
    m = len(d)
    mask = ~np.eye(m, dtype=bool)
    return d[mask].reshape(m, m - 1)


def local_density(distances, k: int) -> np.ndarray:
    """``rho(j) = exp(-(1/K) * sum of squared distances to the K nearest others)``."""
    d = np.asarray(distances, dtype=np.float64)
    m = len(d)
    if k < 1 or k > m - 1:
        raise InvalidInputError(f"K must be in 1..{m - 1}, got {k}")
    nearest = np.sort(_off_diagonal(d), axis=1)[:, :k]
    return np.exp(-np.mean(nearest * nearest, axis=1))


def isolation(distances, density) -> np.ndarray:
    """Distance to the nearest strictly denser center; row maximum for peaks."""
    d = np.asarray(distances, dtype=np.float64)
    rho = np.asarray(density, dtype=np.float64)
    denser = rho[None, :] > rho[:, None]
    d_max = d.max()
    masked_min = np.where(denser, d, d_max).min(axis=1)
    off = _off_diagonal(d)
    row_max = off.max(axis=1) if off.shape[1] else np.zeros(len(d))
    return np.where(denser.any(axis=1), masked_min, row_max)


def select_top(scores, keep: int) -> np.ndarray:
    """Indices of the ``keep`` largest scores, descending; ties to the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    if keep < 1 or keep > len(s):
        raise InvalidInputError(f"keep must be in 1..{len(s)}, got {keep}")
    order = np.lexsort((np.arange(len(s)), -s))
    return order[:keep]


def filter_centers(tokens: SupertokenSet | None, centers: CenterSet, k: int, keep: int,
                   height: int, width: int) -> FilterResult:
    """Score centers and keep the ``keep`` best.

    When ``tokens`` is given, its aggregated features replace the centers'
    semantic rows before scoring.  Kept centers are returned by index only;
    their coordinates and feature rows are not merged or modified.
    """
    m = centers.count
    if keep > m:
        raise InvalidInputError(f"cannot keep {keep} of {m} centers")
    if k > m - 1:
        raise InvalidInputError(f"K must be <= {m - 1}, got {k}")
    if tokens is not None:
        if tokens.count != m:
            raise InvalidInputError("token count does not match center count")
        centers = centers.with_semantic(tokens.features)
    d = center_distance_matrix(centers, height, width)
    rho = local_density(d, k)
    eta = isolation(d, rho)
    scores = rho * eta
    kept = select_top(scores, keep)
    if keep >= 2:
        d_e, loss = separation_loss(centers.semantic[kept])
    else:
        d_e, loss = float("nan"), float("nan")
    return FilterResult(kept, scores, rho, eta, d, d_e, loss)


def _pairwise(features: np.ndarray):
    diff = features[:, None, :] - features[None, :, :]
    return diff, np.sqrt(np.sum(diff * diff, axis=-1))


def separation_loss(features) -> tuple[float, float]:
    """Mean pairwise Euclidean distance ``d_e`` over distinct centers and ``1 / d_e``."""
    f = np.asarray(features, dtype=np.float64)
    m = len(f)
    if m < 2:
        raise InvalidInputError("separation needs at least 2 centers")
    _, dist = _pairwise(f)
    d_e = float(dist.sum() / (m * (m - 1)))
    if d_e == 0.0:
        raise DegenerateInputError("all kept centers coincide; separation is zero")
    return d_e, 1.0 / d_e


def separation_loss_grad(features) -> np.ndarray:
    """Gradient of ``1 / d_e`` with respect to the center feature rows."""
    f = np.asarray(features, dtype=np.float64)
    m = len(f)
    d_e, _ = separation_loss(f)
    diff, dist = _pairwise(f)
    safe = np.where(dist > 0, dist, 1.0)
    unit = np.where(dist[..., None] > 0, diff / safe[..., None], 0.0)
    dd_e = 2.0 * unit.sum(axis=1) / (m * (m - 1))
    return -dd_e / (d_e * d_e)
