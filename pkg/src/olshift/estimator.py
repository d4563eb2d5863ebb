"""Confusion-matrix prior estimation and the unbiased risk estimator.

The prior solve uses a direct linear solve with partial pivoting rather
than an explicit inverse, and the resulting raw estimate is never clipped:
negative entries are what keep the risk estimator unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateConfusionError,
    InvalidInputError,
    LabeledDataset,
    MissingClassError,
    PriorVector,
    RawPriorEstimate,
)
from .model import ModelParams, PerClassRisks, predict_labels_batch

__all__ = [
    "ConfusionMatrix",
    "RiskEstimate",
    "estimate_confusion",
    "regularize_and_invertibility",
    "predicted_histogram",
    "estimate_prior",
    "unbiased_risk",
]

_COLUMN_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ConfusionMatrix:
    """Column-stochastic estimate of the initial model's prediction rates.

    Entry [i, j] is the empirical rate at which the initial model predicts
    class i on class-j samples.  ``min_singular`` is computed once and
    cached; ``ridge`` is nonzero only for matrices that went through
    :func:`regularize_and_invertibility`, whose output is no longer exactly
    column-stochastic.
    """

    entries: np.ndarray
    min_singular: float = None  # type: ignore[assignment]
    ridge: float = 0.0

    def __post_init__(self):
        c = np.array(np.asarray(self.entries, dtype=np.float64))
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise InvalidInputError("confusion matrix must be square with K >= 2")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("confusion matrix entries must be finite")
        if self.ridge == 0.0:
            if np.any(c < -1e-12) or np.any(c > 1.0 + 1e-12):
                raise InvalidInputError("confusion entries must lie in [0, 1]")
            colsums = c.sum(axis=0)
            if np.any(np.abs(colsums - 1.0) > _COLUMN_SUM_TOL):
                raise InvalidInputError("confusion columns must sum to 1")
        sigma = float(np.linalg.svd(c, compute_uv=False)[-1])
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)
        object.__setattr__(self, "min_singular", sigma)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def regularized(self) -> bool:
        return self.ridge > 0.0


@dataclass(frozen=True)
class RiskEstimate:
    """Risk value and gradient as raw-prior-weighted per-class sums."""

    value: float
    gradient: np.ndarray
    raw_prior: RawPriorEstimate


def estimate_confusion(f0: ModelParams, offline: LabeledDataset) -> ConfusionMatrix:
    """Count-based confusion of ``f0`` on the offline set; columns sum to 1."""
    k = offline.num_classes
    if f0.num_classes != k:
        raise InvalidInputError("model classes do not match offline classes")
    preds = predict_labels_batch(f0, offline.features)
    counts = np.zeros((k, k))
    np.add.at(counts, (preds - 1, offline.labels - 1), 1.0)
    class_totals = counts.sum(axis=0)
    missing = np.nonzero(class_totals == 0)[0]
    if missing.size:
        raise MissingClassError(int(missing[0]) + 1, "offline set")
    return ConfusionMatrix(counts / class_totals)


def regularize_and_invertibility(
    c: ConfusionMatrix, sigma_floor: float = 1e-3
) -> ConfusionMatrix:
    """Return ``c`` unchanged if well conditioned, else the smallest ridge fix.

    Tries C + lam*I for lam in {1e-6, 1e-5, ..., 1} and returns the first
    that lifts the minimum singular value to ``sigma_floor``, flagged via
    the ``ridge`` field.
    """
    if not sigma_floor > 0:
        raise InvalidInputError("sigma floor must be positive")
    if c.min_singular >= sigma_floor:
        return c
    lam = 1e-6
    eye = np.eye(c.k)
    while lam <= 1.0:
        candidate = ConfusionMatrix(c.entries + lam * eye, ridge=lam)
        if candidate.min_singular >= sigma_floor:
            return candidate
        lam *= 10.0
    raise DegenerateConfusionError(
        f"no ridge <= 1 reaches min singular value {sigma_floor}"
    )


def predicted_histogram(f0: ModelParams, features: np.ndarray) -> PriorVector:
    """Histogram of the initial model's predicted labels over a batch."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise InvalidInputError("batch must contain at least one sample")
    preds = predict_labels_batch(f0, features)
    counts = np.bincount(preds - 1, minlength=f0.num_classes).astype(np.float64)
    return PriorVector(counts / features.shape[0])


def estimate_prior(c: ConfusionMatrix, hist: PriorVector) -> RawPriorEstimate:
    """Solve C mu = hist for the current class prior; entries may be negative."""
    if hist.k != c.k:
        raise InvalidInputError("histogram dimension does not match confusion matrix")
    try:
        raw = np.linalg.solve(c.entries, hist.entries)
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfusionError(f"prior solve failed: {exc}") from exc
    if not np.all(np.isfinite(raw)):
        raise DegenerateConfusionError("prior solve produced non-finite entries")
    return RawPriorEstimate(raw)


def unbiased_risk(raw: RawPriorEstimate, pcr: PerClassRisks) -> RiskEstimate:
    """Raw-prior-weighted combination of per-class risks and gradients."""
    if raw.k != pcr.k:
        raise InvalidInputError("raw prior dimension does not match per-class risks")
    if pcr.gradients is None:
        raise InvalidInputError("per-class gradients are required for the risk estimate")
    value = float(raw.entries @ pcr.values)
    gradient = np.einsum("k,k...->...", raw.entries, pcr.gradients)
    return RiskEstimate(value, gradient, raw)
