"""Hint priors that forecast the next round's risk function.

A hint prior h induces the hint function H(w) = sum_k h_k * (class-k mean
risk at w); its value and gradient are exact linear combinations of the
per-class risks.  Four constructors are provided:

* forward  -- the current round's raw prior estimate (transductive: it uses
  the same batch the round's loss will be built from);
* window   -- mean of the last L_m raw estimates;
* periodic -- a circular buffer of per-phase running averages;
* okm      -- online k-means prototypes over batch-mean features, each
  carrying its own running prior.

Window, periodic, and okm hints for round t are built strictly from rounds
before t; forward is the deliberate exception and is flagged as such.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInputError, PriorVector, RawPriorEstimate
from .model import PerClassRiskProvider, PerClassRisks

__all__ = [
    "HintFunction",
    "PeriodicBuffer",
    "PrototypeBank",
    "cap_hint_prior",
    "forward_hint",
    "window_hint",
    "periodic_hint",
    "okm_hint",
    "hint_eval",
    "HintProvider",
    "make_hint_provider",
    "HINT_KINDS",
]

HINT_KINDS = ("none", "forward", "window", "periodic", "okm")


def cap_hint_prior(h: np.ndarray, sigma: float) -> np.ndarray:
    """Rescale h so the analytic hint-gradient bound stays within G*sqrt(K)/sigma.

    The bound chain gives ||grad H|| <= G * ||h||_1 * sqrt(K), so scaling by
    min(1, 1/(sigma*||h||_1)) is a cheap sufficient condition.
    """
    h = np.asarray(h, dtype=np.float64)
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive for the hint cap")
    l1 = float(np.abs(h).sum())
    if l1 * sigma <= 1.0:
        return h
    return h / (sigma * l1)


@dataclass(frozen=True)
class HintFunction:
    """H(w) = sum_k h_k R_k(w) with h already gradient-capped.

    ``curvature_bound`` bounds the Lipschitz constant of grad H, which the
    implicit prox step needs for a descent-safe step size.
    """

    prior: np.ndarray
    provider: PerClassRiskProvider
    transductive: bool = False
    kind: str = "none"

    def __post_init__(self):
        h = np.asarray(self.prior, dtype=np.float64)
        if h.ndim != 1 or h.size != self.provider.num_classes:
            raise InvalidInputError("hint prior dimension does not match provider")
        if not np.all(np.isfinite(h)):
            raise InvalidInputError("hint prior must be finite")
        object.__setattr__(self, "prior", h)

    def is_zero(self) -> bool:
        return not np.any(self.prior)

    def curvature_bound(self) -> float:
        return self.provider.curvature_unit() * float(np.abs(self.prior).sum())

    def value(self, weights: np.ndarray) -> float:
        return float(self.values_many(weights[None])[0])

    def value_and_gradient(self, weights: np.ndarray) -> tuple[float, np.ndarray]:
        vals, grads = self.values_and_gradients_many(weights[None])
        return float(vals[0]), grads[0]

    def values_many(self, weight_stack: np.ndarray) -> np.ndarray:
        vals, _ = self.provider.weighted_risk_many(
            weight_stack, self.prior, with_gradients=False
        )
        return vals

    def values_and_gradients_many(
        self, weight_stack: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        return self.provider.weighted_risk_many(weight_stack, self.prior)

    def gradients_many(self, weight_stack: np.ndarray) -> np.ndarray:
        _, grads = self.provider.weighted_risk_many(
            weight_stack, self.prior, with_values=False
        )
        return grads


@dataclass
class PeriodicBuffer:
    """L_p per-phase slots, each a running average of raw prior estimates.

    Slot ``t mod L_p`` collects the estimates of rounds congruent to t; all
    slots start at the offline prior.  ``mix`` fixes a constant blend, while
    the default None keeps the per-slot running average 1/n_i.
    """

    slots: np.ndarray
    update_counts: np.ndarray
    mix: Optional[float] = None

    @staticmethod
    def initialized(period: int, offline_prior: PriorVector, mix: Optional[float] = None) -> "PeriodicBuffer":
        if period < 1:
            raise InvalidInputError("periodic buffer needs period >= 1")
        if mix is not None and not 0.0 <= mix <= 1.0:
            raise InvalidInputError("mix coefficient must lie in [0, 1]")
        slots = np.tile(offline_prior.entries, (period, 1))
        return PeriodicBuffer(slots, np.zeros(period, dtype=np.int64), mix)

    @property
    def period(self) -> int:
        return self.slots.shape[0]

    def slot_for_round(self, t: int) -> np.ndarray:
        return self.slots[t % self.period].copy()


@dataclass
class PrototypeBank:
    """Online k-means prototypes: (mean feature, running prior) pairs.

    Prototypes activate lazily: the first L_k batches seed the mean
    features, after which batches attach to the nearest prototype.
    """

    capacity: int
    offline_prior: np.ndarray
    means: list = field(default_factory=list)
    priors: list = field(default_factory=list)
    update_counts: list = field(default_factory=list)
    mix: Optional[float] = None

    @staticmethod
    def initialized(capacity: int, offline_prior: PriorVector, mix: Optional[float] = None) -> "PrototypeBank":
        if capacity < 1:
            raise InvalidInputError("prototype bank needs capacity >= 1")
        if mix is not None and not 0.0 <= mix <= 1.0:
            raise InvalidInputError("mix coefficient must lie in [0, 1]")
        return PrototypeBank(capacity, np.array(offline_prior.entries), mix=mix)

    @property
    def active(self) -> int:
        return len(self.means)


def forward_hint(current_raw_prior: RawPriorEstimate) -> np.ndarray:
    """The current round's raw estimate, passed through unchanged."""
    return np.array(current_raw_prior.entries)


def window_hint(
    history: Sequence[np.ndarray], window: int, offline_prior: PriorVector
) -> np.ndarray:
    """Mean of the last ``window`` raw estimates; offline prior when empty."""
    if window < 1:
        raise InvalidInputError("window length must be >= 1")
    if not len(history):
        return np.array(offline_prior.entries)
    recent = history[-min(window, len(history)):]
    return np.mean(np.stack(recent), axis=0)


def _mix_coefficient(configured: Optional[float], count: int) -> float:
    # count includes the current update; None means running average 1/n.
    return configured if configured is not None else 1.0 / count


def periodic_hint(
    buffer: PeriodicBuffer, new_raw: np.ndarray, t: int
) -> tuple[PeriodicBuffer, np.ndarray]:
    """Blend the round-t estimate into slot t mod L_p and return that slot."""
    new_raw = np.asarray(new_raw, dtype=np.float64)
    i = t % buffer.period
    slots = buffer.slots.copy()
    counts = buffer.update_counts.copy()
    counts[i] += 1
    lam = _mix_coefficient(buffer.mix, int(counts[i]))
    slots[i] = (1.0 - lam) * slots[i] + lam * new_raw
    updated = PeriodicBuffer(slots, counts, buffer.mix)
    return updated, slots[i].copy()


def okm_hint(
    bank: PrototypeBank, batch_features: np.ndarray, new_raw: np.ndarray
) -> tuple[PrototypeBank, np.ndarray]:
    """Attach the batch to its nearest prototype and refresh that prototype.

    The selector argmin_i mean_x ||xbar_i - x||^2 equals nearest-to-batch-mean
    plus a constant, so only the batch mean is needed.  Ties break toward the
    smallest index.
    """
    batch_features = np.asarray(batch_features, dtype=np.float64)
    if batch_features.ndim != 2 or batch_features.shape[0] < 1:
        raise InvalidInputError("okm hint needs a nonempty batch")
    new_raw = np.asarray(new_raw, dtype=np.float64)
    batch_mean = batch_features.mean(axis=0)
    means = [m.copy() for m in bank.means]
    priors = [p.copy() for p in bank.priors]
    counts = list(bank.update_counts)
    if bank.active < bank.capacity:
        i = bank.active
        means.append(batch_mean.copy())
        priors.append(bank.offline_prior.copy())
        counts.append(0)
    else:
        dists = np.array([np.sum((m - batch_mean) ** 2) for m in means])
        i = int(np.argmin(dists))
    counts[i] += 1
    kappa = _mix_coefficient(bank.mix, counts[i])
    means[i] = (1.0 - kappa) * means[i] + kappa * batch_mean
    priors[i] = (1.0 - kappa) * priors[i] + kappa * new_raw
    updated = PrototypeBank(bank.capacity, bank.offline_prior, means, priors, counts, bank.mix)
    return updated, priors[i].copy()


def hint_eval(h: np.ndarray, pcr: PerClassRisks) -> tuple[float, np.ndarray]:
    """Value and gradient of the induced hint function at fixed per-class risks."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != pcr.values.shape:
        raise InvalidInputError("hint prior dimension does not match per-class risks")
    if pcr.gradients is None:
        raise InvalidInputError("per-class gradients required for hint evaluation")
    return float(h @ pcr.values), np.einsum("k,k...->...", h, pcr.gradients)


class HintProvider:
    """Round-by-round hint-prior source driving an adaptive ensemble.

    ``prior_for_round`` returns the (uncapped) hint prior available before
    round t's batch arrives, or None for the transductive forward hint,
    which instead passes the fresh raw estimate through
    ``transductive_prior``.  ``observe`` folds the finished round's batch
    statistics into the hint state.
    """

    def __init__(
        self,
        kind: str,
        offline_prior: PriorVector,
        window: int = 100,
        period: int = 40,
        prototypes: int = 4,
        mix: Optional[float] = None,
    ):
        if kind not in HINT_KINDS:
            raise InvalidInputError(f"unknown hint kind {kind!r}; expected one of {HINT_KINDS}")
        self.kind = kind
        self.transductive = kind == "forward"
        self.offline_prior = offline_prior
        self._window = window
        self._history: list[np.ndarray] = []
        self._buffer = (
            PeriodicBuffer.initialized(period, offline_prior, mix) if kind == "periodic" else None
        )
        self._bank = (
            PrototypeBank.initialized(prototypes, offline_prior, mix) if kind == "okm" else None
        )
        self._pending_okm: Optional[np.ndarray] = None
        if kind == "window" and window < 1:
            raise InvalidInputError("window length must be >= 1")

    def prior_for_round(self, t: int) -> Optional[np.ndarray]:
        if self.kind == "none":
            return np.zeros(self.offline_prior.k)
        if self.kind == "forward":
            return None
        if self.kind == "window":
            return window_hint(self._history, self._window, self.offline_prior)
        if self.kind == "periodic":
            return self._buffer.slot_for_round(t)
        if self._pending_okm is None:
            return np.array(self.offline_prior.entries)
        return self._pending_okm.copy()

    def transductive_prior(self, raw: RawPriorEstimate) -> np.ndarray:
        return forward_hint(raw)

    def observe(self, t: int, batch_features: np.ndarray, raw: RawPriorEstimate) -> None:
        if self.kind in ("none", "forward"):
            return
        if self.kind == "window":
            self._history.append(np.array(raw.entries))
        elif self.kind == "periodic":
            self._buffer, _ = periodic_hint(self._buffer, raw.entries, t)
        else:
            self._bank, hint = okm_hint(self._bank, batch_features, raw.entries)
            self._pending_okm = hint


def make_hint_provider(kind: str, offline_prior: PriorVector, **kwargs) -> HintProvider:
    return HintProvider(kind, offline_prior, **kwargs)
