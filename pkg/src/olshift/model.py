"""Multiclass linear model with softmax cross-entropy surrogate loss.

Parameters are a K x (d+1) matrix (bias in the last column), flattened for
norm and projection purposes.  The decision set is an origin-centered L2
ball; keeping the bias inside the norm constraint makes projection a single
rescale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    InvalidInputError,
    LabeledDataset,
    MissingClassError,
    NumericalError,
)

__all__ = [
    "ModelParams",
    "DomainSpec",
    "LossConstants",
    "PerClassRisks",
    "OfflineOptConfig",
    "PerClassRiskProvider",
    "augment",
    "predict_scores",
    "predict_scores_batch",
    "predict_label",
    "predict_labels_batch",
    "softmax_probs_batch",
    "surrogate_loss",
    "surrogate_loss_gradient",
    "per_class_risks",
    "project_to_domain",
    "project_weights",
    "train_offline",
    "estimate_constants",
]


@dataclass(frozen=True)
class ModelParams:
    """Linear model weights, shape (K, d+1); last column is the bias."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 2 or w.shape[0] < 2 or w.shape[1] < 2:
            raise InvalidInputError("weights must be (K, d+1) with K >= 2, d >= 1")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1] - 1

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    @staticmethod
    def zeros(num_classes: int, dim: int) -> "ModelParams":
        return ModelParams(np.zeros((num_classes, dim + 1)))


@dataclass(frozen=True)
class DomainSpec:
    """Origin-centered L2 ball of radius r; diameter is 2r."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError("domain radius must be positive")

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @staticmethod
    def unbounded() -> "DomainSpec":
        return DomainSpec(math.inf)


@dataclass(frozen=True)
class LossConstants:
    """Empirical bounds on gradient norm (G) and loss value (B)."""

    grad_bound: float
    loss_bound: float

    def __post_init__(self):
        if not (math.isfinite(self.grad_bound) and math.isfinite(self.loss_bound)):
            raise InvalidInputError("loss constants must be finite")
        if self.grad_bound <= 0 or self.loss_bound <= 0:
            raise InvalidInputError("loss constants must be positive")


@dataclass(frozen=True)
class PerClassRisks:
    """Per-class mean losses; gradients are optional (computed on demand)."""

    values: np.ndarray
    gradients: Optional[np.ndarray] = None  # (K, K, d+1)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise InvalidInputError("per-class risk values must be a finite 1-D vector")
        object.__setattr__(self, "values", v)
        if self.gradients is not None:
            g = np.asarray(self.gradients, dtype=np.float64)
            if g.shape[0] != v.size or not np.all(np.isfinite(g)):
                raise InvalidInputError("per-class gradients must be finite, one per class")
            object.__setattr__(self, "gradients", g)

    @property
    def k(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class OfflineOptConfig:
    """Projected full-batch gradient descent settings for the offline fit."""

    max_iters: int = 2000
    tol: float = 1e-6
    step: Optional[float] = None  # None: 1 / (max ||[x;1]||^2 / 4)


def augment(features: np.ndarray) -> np.ndarray:
    """Append the constant-1 bias coordinate: (n, d) -> (n, d+1)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        return np.concatenate([features, [1.0]])
    return np.concatenate([features, np.ones((features.shape[0], 1))], axis=1)


def _check_dims(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != params.dim:
        raise InvalidInputError(
            f"feature dimension {x.shape} does not match model dim {params.dim}"
        )
    return x


def predict_scores(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Linear scores W [x; 1] for one feature vector."""
    x = _check_dims(params, x)
    return params.weights @ augment(x)


def predict_scores_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.dim:
        raise InvalidInputError("feature matrix does not match model dim")
    return augment(features) @ params.weights.T


def predict_label(params: ModelParams, x: np.ndarray) -> int:
    """Argmax class in 1..K; ties break toward the smallest index."""
    return int(np.argmax(predict_scores(params, x))) + 1


def predict_labels_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return np.argmax(predict_scores_batch(params, features), axis=1) + 1


def softmax_probs_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Row-wise softmax of the linear scores (the calibrated class probabilities)."""
    s = predict_scores_batch(params, features)
    s = s - s.max(axis=1, keepdims=True)
    p = np.exp(s)
    return p / p.sum(axis=1, keepdims=True)


def _check_label(params: ModelParams, y: int) -> int:
    y = int(y)
    if not 1 <= y <= params.num_classes:
        raise InvalidInputError(f"label {y} outside 1..{params.num_classes}")
    return y


def surrogate_loss(params: ModelParams, x: np.ndarray, y: int) -> float:
    """Softmax cross-entropy -log softmax(scores)[y], max-shifted for stability."""
    y = _check_label(params, y)
    s = predict_scores(params, x)
    m = s.max()
    logz = m + math.log(np.exp(s - m).sum())
    return float(logz - s[y - 1])


def surrogate_loss_gradient(params: ModelParams, x: np.ndarray, y: int) -> np.ndarray:
    """(softmax(scores) - onehot(y)) outer [x; 1], shape (K, d+1)."""
    y = _check_label(params, y)
    x = _check_dims(params, x)
    s = predict_scores(params, x)
    p = np.exp(s - s.max())
    p /= p.sum()
    p[y - 1] -= 1.0
    return np.outer(p, augment(x))


def project_weights(weights: np.ndarray, radius: float) -> np.ndarray:
    """Rescale onto the radius-r ball if outside; identity on the interior."""
    nrm = float(np.linalg.norm(weights))
    if nrm <= radius:
        return weights
    return weights * (radius / nrm)


def project_to_domain(params: ModelParams, domain: DomainSpec) -> ModelParams:
    w = project_weights(params.weights, domain.radius)
    if w is params.weights:
        return params
    return ModelParams(w)


class PerClassRiskProvider:
    """Per-class mean losses and gradients over a fixed labeled set.

    The offline set never changes after construction, so the class slices
    and their augmented features are precomputed once.  Evaluation is
    vectorized over samples and, via ``*_many``, over stacks of parameter
    matrices; summation order is fixed, so results are deterministic.
    """

    def __init__(self, dataset: LabeledDataset):
        k = dataset.num_classes
        counts = dataset.class_counts()
        missing = np.nonzero(counts == 0)[0]
        if missing.size:
            raise MissingClassError(int(missing[0]) + 1, "offline set")
        self.num_classes = k
        self.dim = dataset.dim
        xaug = augment(dataset.features)
        order = np.argsort(dataset.labels, kind="stable")
        self._xaug = xaug[order]  # class-sorted for segment reductions
        self._labels0 = (dataset.labels[order] - 1).astype(np.int64)
        self._counts = counts.astype(np.float64)
        self._starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        self._class_features = [
            self._xaug[s:s + int(c)] for s, c in zip(self._starts, counts)
        ]
        self._onehot = np.zeros((len(self._labels0), k))
        self._onehot[np.arange(len(self._labels0)), self._labels0] = 1.0
        self.max_feature_sq = float((xaug * xaug).sum(axis=1).max())

    def curvature_unit(self) -> float:
        """Smoothness of one per-class risk: max ||[x;1]||^2 / 2 bounds the Hessian."""
        return self.max_feature_sq / 2.0

    def values(self, weights: np.ndarray) -> np.ndarray:
        vals, _ = self._evaluate(weights[None], with_gradients=False)
        return vals[0]

    def values_and_gradients(self, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals, grads = self._evaluate(weights[None], with_gradients=True)
        return vals[0], grads[0]

    def values_many(self, weight_stack: np.ndarray) -> np.ndarray:
        vals, _ = self._evaluate(weight_stack, with_gradients=False)
        return vals

    def values_and_gradients_many(self, weight_stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self._evaluate(weight_stack, with_gradients=True)

    def evaluate(self, params: ModelParams, with_gradients: bool = True) -> PerClassRisks:
        vals, grads = self._evaluate(params.weights[None], with_gradients)
        return PerClassRisks(vals[0], grads[0] if grads is not None else None)

    def weighted_risk_many(
        self, weight_stack: np.ndarray, class_weights: np.ndarray,
        with_gradients: bool = True, with_values: bool = True,
    ) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        """sum_k class_weights[k] * (class-k mean risk), batched over models.

        One pass over the offline set per call; the per-class decomposition
        collapses into per-sample weights h_{y_n} / n_{y_n}, which is what
        the prox inner loop wants (it never needs the per-class tensors).
        ``with_values=False`` skips the loss reduction for gradient-only use.
        """
        w = np.asarray(weight_stack, dtype=np.float64)
        if w.ndim != 3 or w.shape[1] != self.num_classes or w.shape[2] != self.dim + 1:
            raise InvalidInputError("weight stack must be (M, K, d+1)")
        m, k = w.shape[0], self.num_classes
        n, d1 = self._xaug.shape
        alpha = (np.asarray(class_weights, dtype=np.float64) / self._counts)[
            self._labels0
        ]
        # one big GEMM in the (n, M*K) layout, then in-place softmax passes
        scores = (self._xaug @ w.reshape(m * k, d1).T).reshape(n, m, k)
        values = None
        if with_values:
            label_scores = np.take_along_axis(
                scores, self._labels0[:, None, None], axis=2
            )[:, :, 0]
        shift = scores.max(axis=2)
        np.subtract(scores, shift[:, :, None], out=scores)
        np.exp(scores, out=scores)
        sumexp = scores.sum(axis=2)
        if with_values:
            losses = shift + np.log(sumexp)
            losses -= label_scores
            values = alpha @ losses
        if not with_gradients:
            return values, None
        np.divide(scores, sumexp[:, :, None], out=scores)
        np.subtract(scores, self._onehot[:, None, :], out=scores)
        np.multiply(scores, alpha[:, None, None], out=scores)
        grads = (scores.reshape(n, m * k).T @ self._xaug).reshape(m, k, d1)
        return values, grads

    def per_class_values_and_weighted_grad_many(
        self, weight_stack: np.ndarray, class_weights: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-class mean losses plus the class_weights-combined gradient.

        The online round needs both: per-class values feed the risk values
        and hint evaluations; the weighted gradient is the update direction.
        Sharing the softmax pass halves the per-round provider cost.
        """
        w = np.asarray(weight_stack, dtype=np.float64)
        if w.ndim != 3 or w.shape[1] != self.num_classes or w.shape[2] != self.dim + 1:
            raise InvalidInputError("weight stack must be (M, K, d+1)")
        m, k = w.shape[0], self.num_classes
        n, d1 = self._xaug.shape
        alpha = (np.asarray(class_weights, dtype=np.float64) / self._counts)[
            self._labels0
        ]
        scores = (self._xaug @ w.reshape(m * k, d1).T).reshape(n, m, k)
        label_scores = np.take_along_axis(
            scores, self._labels0[:, None, None], axis=2
        )[:, :, 0]
        shift = scores.max(axis=2)
        np.subtract(scores, shift[:, :, None], out=scores)
        np.exp(scores, out=scores)
        sumexp = scores.sum(axis=2)
        losses = shift + np.log(sumexp)
        losses -= label_scores
        vals = (
            np.add.reduceat(losses, self._starts, axis=0) / self._counts[:, None]
        ).T
        np.divide(scores, sumexp[:, :, None], out=scores)
        np.subtract(scores, self._onehot[:, None, :], out=scores)
        np.multiply(scores, alpha[:, None, None], out=scores)
        grads = (scores.reshape(n, m * k).T @ self._xaug).reshape(m, k, d1)
        return vals, grads

    def _evaluate(self, weight_stack: np.ndarray, with_gradients: bool):
        w = np.asarray(weight_stack, dtype=np.float64)
        if w.ndim != 3 or w.shape[1] != self.num_classes or w.shape[2] != self.dim + 1:
            raise InvalidInputError("weight stack must be (M, K, d+1)")
        m, k = w.shape[0], self.num_classes
        n, d1 = self._xaug.shape
        scores = (self._xaug @ w.reshape(m * k, d1).T).reshape(n, m, k)
        label_scores = np.take_along_axis(
            scores, self._labels0[:, None, None], axis=2
        )[:, :, 0]
        shift = scores.max(axis=2)
        np.subtract(scores, shift[:, :, None], out=scores)
        np.exp(scores, out=scores)
        sumexp = scores.sum(axis=2)
        losses = shift + np.log(sumexp)
        losses -= label_scores
        vals = (
            np.add.reduceat(losses, self._starts, axis=0) / self._counts[:, None]
        ).T
        if not with_gradients:
            return vals, None
        grads = np.empty((m, k, k, d1))
        probs = scores
        np.divide(probs, sumexp[:, :, None], out=probs)
        for c in range(k):
            xc = self._class_features[c]
            sl = slice(self._starts[c], self._starts[c] + xc.shape[0])
            g = np.matmul(probs[sl].transpose(1, 2, 0), xc) / xc.shape[0]
            g[:, c, :] -= xc.mean(axis=0)
            grads[:, c] = g
        return vals, grads


def per_class_risks(
    params: ModelParams, offline: LabeledDataset, with_gradients: bool = True
) -> PerClassRisks:
    """Mean surrogate loss (and gradient) over each class slice of ``offline``."""
    return PerClassRiskProvider(offline).evaluate(params, with_gradients)


def _mean_loss_and_gradient(weights: np.ndarray, xaug: np.ndarray, labels0: np.ndarray):
    scores = xaug @ weights.T
    shift = scores.max(axis=1, keepdims=True)
    expd = np.exp(scores - shift)
    logz = shift[:, 0] + np.log(expd.sum(axis=1))
    n = xaug.shape[0]
    loss = float((logz - scores[np.arange(n), labels0]).mean())
    probs = expd / expd.sum(axis=1, keepdims=True)
    probs[np.arange(n), labels0] -= 1.0
    grad = probs.T @ xaug / n
    return loss, grad


def train_offline(
    offline: LabeledDataset,
    domain: DomainSpec,
    opt_config: OfflineOptConfig = OfflineOptConfig(),
) -> ModelParams:
    """Fit the initial model by projected full-batch gradient descent.

    Starts from zero weights, steps with 1/L for the crude curvature
    estimate L = max ||[x;1]||^2 / 4, and stops at ``max_iters`` or when the
    mean-gradient norm drops below ``tol``.  Deterministic by construction.
    """
    counts = offline.class_counts()
    missing = np.nonzero(counts == 0)[0]
    if missing.size:
        raise MissingClassError(int(missing[0]) + 1, "offline set")
    k, d = offline.num_classes, offline.dim
    xaug = augment(offline.features)
    labels0 = offline.labels - 1
    step = opt_config.step
    if step is None:
        step = 1.0 / ((xaug * xaug).sum(axis=1).max() / 4.0)
    w = np.zeros((k, d + 1))
    for _ in range(opt_config.max_iters):
        _, grad = _mean_loss_and_gradient(w, xaug, labels0)
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient during offline training")
        if float(np.linalg.norm(grad)) < opt_config.tol:
            break
        w = project_weights(w - step * grad, domain.radius)
    return ModelParams(w)


def estimate_constants(
    f0: ModelParams,
    offline: LabeledDataset,
    domain: DomainSpec,
    safety_factor: float = 2.0,
) -> LossConstants:
    """Estimate the gradient and loss bounds G and B from the offline set.

    Maxima of per-sample gradient norms and absolute losses are taken at f0
    and at the domain boundary along f0's direction, then inflated by
    ``safety_factor``.  The per-sample gradient norm has the closed form
    ||softmax(s) - onehot(y)||_2 * ||[x;1]||_2.
    """
    if safety_factor <= 0:
        raise InvalidInputError("safety factor must be positive")
    xaug = augment(offline.features)
    labels0 = offline.labels - 1
    xnorms = np.sqrt((xaug * xaug).sum(axis=1))
    eval_points = [f0.weights]
    nrm = f0.norm
    if nrm > 0 and math.isfinite(domain.radius):
        eval_points.append(f0.weights * (domain.radius / nrm))
    max_grad, max_loss = 0.0, 0.0
    n = xaug.shape[0]
    for w in eval_points:
        scores = xaug @ w.T
        shift = scores.max(axis=1, keepdims=True)
        expd = np.exp(scores - shift)
        logz = shift[:, 0] + np.log(expd.sum(axis=1))
        losses = logz - scores[np.arange(n), labels0]
        probs = expd / expd.sum(axis=1, keepdims=True)
        probs[np.arange(n), labels0] -= 1.0
        gnorms = np.sqrt((probs * probs).sum(axis=1)) * xnorms
        max_grad = max(max_grad, float(gnorms.max()))
        max_loss = max(max_loss, float(np.abs(losses).max()))
    return LossConstants(safety_factor * max_grad, safety_factor * max_loss)
