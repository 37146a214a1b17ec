"""Hard pixel-to-token assignment and class-proportion supervision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError, InvalidStateError
from .hsi import LabelMap
from .scpa import AssociationMatrix

__all__ = [
    "LOG_FLOOR",
    "HardAssignment",
    "SoftLabelMatrix",
    "hard_assign",
    "class_counts",
    "soft_labels",
    "hard_labels",
    "soft_cross_entropy",
    "total_loss",
    "project_to_pixels",
]

LOG_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class HardAssignment:
    """Token index of every pixel (row-major), plus the token count."""

    tokens: np.ndarray
    n_tokens: int


@dataclass(frozen=True, eq=False)
class SoftLabelMatrix:
    """Per-token class distributions; invalid rows (no labeled pixels) are zero."""

    values: np.ndarray  # M x C
    valid: np.ndarray  # M bool

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


def hard_assign(assoc: AssociationMatrix) -> HardAssignment:
    """Each pixel goes to its stored center with the largest weight.

    Equal weights resolve to the lower center index, regardless of the order
    the entries are stored in.
    """
    if assoc.mask_size < 1:
        raise InvalidStateError("pixels without any stored association")
    w = assoc.weights
    c = assoc.centers
    best = w.max(axis=1, keepdims=True)
    cand = np.where(w == best, c, np.iinfo(np.int64).max)
    return HardAssignment(tokens=cand.min(axis=1), n_tokens=assoc.n_centers)


def class_counts(assign: HardAssignment, labels: LabelMap) -> np.ndarray:
    """Labeled-pixel counts per (token, class), M x C; label 0 is skipped."""
    g = labels.labels.ravel()
    if len(g) != len(assign.tokens):
        raise InvalidInputError("assignment and label map cover different pixel counts")
    c = labels.class_count
    lab = g > 0
    flat = assign.tokens[lab] * c + (g[lab] - 1)
    counts = np.bincount(flat, minlength=assign.n_tokens * c)
    return counts.reshape(assign.n_tokens, c)


def soft_labels(counts) -> SoftLabelMatrix:
    """Normalize each count row to a distribution; empty rows are flagged invalid."""
    cnt = np.asarray(counts, dtype=np.float64)
    if np.any(cnt < 0):
        raise InvalidInputError("counts must be non-negative")
    total = cnt.sum(axis=1)
    valid = total > 0
    values = np.zeros_like(cnt)
    values[valid] = cnt[valid] / total[valid, None]
    return SoftLabelMatrix(values, valid)


def hard_labels(labels: SoftLabelMatrix) -> SoftLabelMatrix:
    """One-hot of each valid row's majority class (lower class index on ties)."""
    onehot = np.zeros_like(labels.values)
    rows = np.flatnonzero(labels.valid)
    onehot[rows, np.argmax(labels.values[rows], axis=1)] = 1.0
    return SoftLabelMatrix(onehot, labels.valid.copy())


def soft_cross_entropy(predictions, labels: SoftLabelMatrix) -> float:
    """Mean over valid tokens of ``-sum_c L(m, c) * log(max(P(m, c), 1e-12))``."""
    p = np.asarray(predictions, dtype=np.float64)
    if p.shape != labels.values.shape:
        raise InvalidInputError(f"prediction shape {p.shape} != label shape {labels.values.shape}")
    n_valid = int(labels.valid.sum())
    if n_valid == 0:
        raise DegenerateInputError("no token has labeled pixels")
    v = labels.valid
    per_token = -np.sum(labels.values[v] * np.log(np.maximum(p[v], LOG_FLOOR)), axis=1)
    return float(per_token.sum() / n_valid)


def total_loss(ce: float, sst: float) -> float:
    return ce + sst


def project_to_pixels(assign: HardAssignment, token_classes, height: int, width: int) -> np.ndarray:
    """Paint every pixel with its token's class, giving an H x W map."""
    cls = np.asarray(token_classes)
    if len(cls) != assign.n_tokens:
        raise InvalidInputError("need one class per token")
    if len(assign.tokens) != height * width:
        raise InvalidInputError("assignment does not cover the image")
    return cls[assign.tokens].reshape(height, width)
