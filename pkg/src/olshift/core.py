"""Shared domain types, simplex geometry, and shift-variation accounting.

Class indices are 1..K everywhere outside numerical kernels (file formats,
``LabeledSample.label``, ``predict_label`` outputs); arrays are indexed
0..K-1 internally.  All value types here are immutable and safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "InvalidInputError",
    "MissingClassError",
    "DegenerateConfusionError",
    "NumericalError",
    "ParseError",
    "SchemaError",
    "UnsupportedDiagnosticError",
    "PriorVector",
    "RawPriorEstimate",
    "LabeledSample",
    "LabeledDataset",
    "OnlineBatch",
    "ShiftTrace",
    "simplex_project",
    "l1_variation",
]

#: Construction renormalizes prior entries whose sum drifts from 1 by at most
#: this much; larger deviations are rejected as bugs rather than float noise.
PRIOR_SUM_TOL = 1e-6


class InvalidInputError(ValueError):
    """An argument violates an operation's preconditions."""


class MissingClassError(InvalidInputError):
    """A labeled set is missing at least one class in 1..K."""

    def __init__(self, class_index: int, context: str = "labeled set"):
        self.class_index = int(class_index)
        super().__init__(f"{context} has no samples of class {self.class_index}")


class DegenerateConfusionError(RuntimeError):
    """The confusion matrix cannot support a stable prior solve."""


class NumericalError(RuntimeError):
    """A numerical routine received or produced non-finite/diverging values."""


class ParseError(ValueError):
    """A data file is malformed; carries the offending line number."""

    def __init__(self, message: str, line_number: int):
        self.line_number = int(line_number)
        super().__init__(f"line {self.line_number}: {message}")


class SchemaError(ValueError):
    """A data file violates the documented schema (labels, header, columns)."""


class UnsupportedDiagnosticError(RuntimeError):
    """A diagnostic was requested on a run that cannot support it."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PriorVector:
    """A point in the K-simplex: nonnegative entries summing to one.

    Sums within ``PRIOR_SUM_TOL`` of 1 are renormalized; anything further off
    is rejected.
    """

    entries: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.entries, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise InvalidInputError("prior vector must be 1-D with K >= 2")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("prior vector entries must be finite")
        if np.any(v < 0.0):
            raise InvalidInputError("prior vector entries must be nonnegative")
        s = float(v.sum())
        if abs(s - 1.0) > PRIOR_SUM_TOL:
            raise InvalidInputError(f"prior vector sums to {s!r}, not 1")
        object.__setattr__(self, "entries", _readonly(v / s))

    @property
    def k(self) -> int:
        return self.entries.size

    def __len__(self) -> int:
        return self.entries.size

    @staticmethod
    def uniform(k: int) -> "PriorVector":
        return PriorVector(np.full(k, 1.0 / k))

    @staticmethod
    def point_mass(index: int, k: int) -> "PriorVector":
        """One-hot prior on class ``index`` (1-based)."""
        if not 1 <= index <= k:
            raise InvalidInputError(f"class index {index} outside 1..{k}")
        v = np.zeros(k)
        v[index - 1] = 1.0
        return PriorVector(v)


@dataclass(frozen=True)
class RawPriorEstimate:
    """Unconstrained K-vector from the confusion-matrix solve.

    Entries may be negative; that signedness is what keeps the downstream
    risk estimator unbiased, so no clipping happens here.
    """

    entries: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.entries, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise InvalidInputError("raw prior estimate must be 1-D with K >= 2")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("raw prior estimate entries must be finite")
        object.__setattr__(self, "entries", _readonly(v))

    @property
    def k(self) -> int:
        return self.entries.size

    def projected(self) -> PriorVector:
        """Nearest simplex point; use only where a probability is required."""
        return simplex_project(self.entries)


@dataclass(frozen=True)
class LabeledSample:
    """One feature vector with its class label in 1..K."""

    features: np.ndarray
    label: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidInputError("sample features must be a 1-D vector")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("sample features must be finite")
        if int(self.label) < 1:
            raise InvalidInputError(f"label {self.label} outside 1..K")
        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "label", int(self.label))


@dataclass(frozen=True)
class LabeledDataset:
    """Column-oriented labeled set: features (n, d) and labels (n,) in 1..K.

    ``num_classes`` defaults to the largest label seen; pass it explicitly
    when a class may be absent from this particular sample.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int = 0

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InvalidInputError("dataset features must be a nonempty (n, d) matrix")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("dataset features must be finite")
        if y.shape != (x.shape[0],):
            raise InvalidInputError("labels must align with feature rows")
        if not np.issubdtype(y.dtype, np.integer):
            yi = y.astype(np.int64)
            if np.any(yi != y):
                raise InvalidInputError("labels must be integers")
            y = yi
        else:
            y = y.astype(np.int64)
        if y.min() < 1:
            raise InvalidInputError("labels must lie in 1..K")
        k = int(self.num_classes) if self.num_classes else int(y.max())
        if y.max() > k:
            raise InvalidInputError(f"label {y.max()} exceeds num_classes={k}")
        y = np.array(y)
        y.setflags(write=False)
        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", k)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes + 1)[1:]

    def empirical_prior(self) -> PriorVector:
        counts = self.class_counts()
        if np.any(counts == 0):
            raise MissingClassError(int(np.argmin(counts)) + 1, "dataset")
        return PriorVector(counts / counts.sum())

    @staticmethod
    def from_samples(samples: Sequence[LabeledSample], num_classes: int = 0) -> "LabeledDataset":
        if not samples:
            raise InvalidInputError("cannot build a dataset from zero samples")
        feats = np.stack([s.features for s in samples])
        labels = np.array([s.label for s in samples], dtype=np.int64)
        return LabeledDataset(feats, labels, num_classes)

    def samples(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield LabeledSample(self.features[i], int(self.labels[i]))


@dataclass(frozen=True)
class OnlineBatch:
    """One round's unlabeled batch plus its evaluation-only labels.

    Learners must only ever be handed ``features``; ``hidden_labels`` exist
    for the error metric and diagnostics.  The harness enforces this by
    passing bare feature matrices into every update path.
    """

    features: np.ndarray
    hidden_labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.hidden_labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidInputError("batch must contain at least one sample")
        if y.shape != (x.shape[0],) or (y.size and y.min() < 1):
            raise InvalidInputError("hidden labels must align with features and lie in 1..K")
        y = np.array(y)
        y.setflags(write=False)
        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "hidden_labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ShiftTrace:
    """A class-prior trajectory with its cumulative L1 variation."""

    priors: tuple
    variation: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        priors = tuple(self.priors)
        if not priors:
            raise InvalidInputError("shift trace needs at least one prior")
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "variation", l1_variation(priors))

    def __len__(self) -> int:
        return len(self.priors)


def simplex_project(v: np.ndarray) -> PriorVector:
    """Euclidean projection of ``v`` onto the probability simplex.

    Sort-based thresholding: find the largest support size rho with
    u_rho + (1 - sum_{i<=rho} u_i) / rho > 0 and clip at that threshold.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise InvalidInputError("simplex projection needs a 1-D vector with K >= 2")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("simplex projection input must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    rho = np.nonzero(u * ranks > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return PriorVector(np.maximum(v - theta, 0.0))


def l1_variation(priors: Sequence[PriorVector]) -> float:
    """Sum of L1 distances between consecutive priors; 0 for one element."""
    if len(priors) == 0:
        raise InvalidInputError("variation of an empty prior sequence is undefined")
    k = priors[0].k
    for p in priors:
        if p.k != k:
            raise InvalidInputError("priors in a trace must share K")
    if len(priors) == 1:
        return 0.0
    stacked = np.stack([p.entries for p in priors])
    return float(np.abs(np.diff(stacked, axis=0)).sum())
