"""End-to-end orchestration: features, two clustering groups around the filter,
supervision targets and desk-scale classifier training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import classifier
from .config import PipelineConfig
from .dicf import FilterResult, filter_centers
from .errors import ConfigError
from .hsi import (FeatureMap, FeatureProvider, HsiCube, LabelMap, PcaFeatureProvider,
                  SpectralDerivative, spectral_derivative)
from .metrics import confusion, scores
from .scpa import (AssociationMatrix, CenterSet, SupertokenSet, init_center_grid,
                   make_centers, scpa_group)
from .softlabel import (HardAssignment, SoftLabelMatrix, class_counts, hard_assign,
                        project_to_pixels, soft_labels)

__all__ = ["ClusterResult", "TrainResult", "run_cluster", "supervision", "predict_map",
           "train_toy"]


@dataclass(frozen=True, eq=False)
class ClusterResult:
    config: PipelineConfig
    derivative: SpectralDerivative
    features: FeatureMap
    first_tokens: SupertokenSet
    first_centers: CenterSet
    filtered: FilterResult
    tokens: SupertokenSet
    association: AssociationMatrix
    centers: CenterSet
    assignment: HardAssignment

    @property
    def separation_loss(self) -> float:
        return self.filtered.loss

    def token_map(self) -> np.ndarray:
        h, w = self.features.height, self.features.width
        return self.assignment.tokens.reshape(h, w)


def run_cluster(cube: HsiCube, config: PipelineConfig, provider: FeatureProvider | None = None,
                threads: int = 1) -> ClusterResult:
    """Derivative -> features -> grid -> K1 blocks -> filter -> K2 blocks -> hard assignment."""
    n = cube.n_pixels
    if config.m1 > n:
        raise ConfigError("m1", f"must be <= the pixel count ({n})")
    if provider is None:
        if config.channels > cube.bands:
            raise ConfigError("channels", f"must be <= the band count ({cube.bands})")
        provider = PcaFeatureProvider(config.channels, config.smoothing_radius)
    with threadpool_limits(limits=threads):
        deriv = spectral_derivative(cube)
        feats = provider(cube)
        coords = init_center_grid(cube.height, cube.width, config.m1)
        centers = make_centers(coords, cube, deriv, feats)
        tok1, _, centers1 = scpa_group(cube, deriv, feats, centers, config.mask_size,
                                       config.repeats_1, threads=threads)
        filt = filter_centers(None, centers1, config.dicf_k, config.m2, cube.height, cube.width)
        kept = centers1.subset(filt.kept_indices)
        mask2 = min(config.mask_size, config.m2)
        tok2, assoc2, centers2 = scpa_group(cube, deriv, feats, kept, mask2, config.repeats_2,
                                            threads=threads)
    return ClusterResult(config, deriv, feats, tok1, centers1, filt, tok2, assoc2, centers2,
                         hard_assign(assoc2))


def supervision(result: ClusterResult, labels: LabelMap) -> tuple[np.ndarray, SoftLabelMatrix]:
    """Class counts per final token and the matching soft-label matrix."""
    counts = class_counts(result.assignment, labels)
    return counts, soft_labels(counts)


def predict_map(result: ClusterResult, params: dict) -> tuple[np.ndarray, np.ndarray]:
    """Token probabilities and the H x W class map (classes numbered from 1)."""
    probs = classifier.classify(result.tokens.features, params)
    token_classes = np.argmax(probs, axis=1) + 1
    h, w = result.features.height, result.features.width
    return probs, project_to_pixels(result.assignment, token_classes, h, w)


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: dict
    trace: list
    cluster: ClusterResult
    labels: SoftLabelMatrix
    class_map: np.ndarray
    metrics: dict


def train_toy(config: PipelineConfig, cube: HsiCube, labels: LabelMap, steps: int = 200,
              lr: float = 0.5, threads: int = 1) -> TrainResult:
    """Cluster once, then fit the classifier by plain gradient descent.

    Only classifier parameters move; the clustering and therefore the
    separation term stay fixed.  Parameters are seeded from ``config.seed``.
    """
    result = run_cluster(cube, config, threads=threads)
    _, soft = supervision(result, labels)
    with threadpool_limits(limits=threads):
        params = classifier.init_params(config.channels, labels.class_count, config.blocks,
                                        seed=config.seed)
        params, trace = classifier.gradient_descent(result.tokens.features, params, soft, steps,
                                                    lr, sst=result.separation_loss,
                                                    pattern=config.blocks)
        _, cmap = predict_map(result, params)
    cm = confusion(labels.labels, cmap, labels.class_count)
    return TrainResult(params, trace, result, soft, cmap, scores(cm))
