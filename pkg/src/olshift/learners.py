"""Online algorithms: projected-gradient base steps on the unbiased risk
estimator, geometric step-size pools, (optimistic) Hedge meta updates, the
implicit prox step, full ensemble round orchestration, and the reweighting
baselines.

A round is deploy-then-update: the combined model served at round t is a
function of rounds < t only (the transductive forward hint being the one
documented exception), the fresh batch then drives every state change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    InvalidInputError,
    NumericalError,
    PriorVector,
    RawPriorEstimate,
)
from .estimator import ConfusionMatrix, estimate_prior, predicted_histogram
from .hints import HintFunction, HintProvider, cap_hint_prior
from .model import DomainSpec, ModelParams, PerClassRiskProvider, project_weights

__all__ = [
    "StepPool",
    "ProxConfig",
    "EnsembleConfig",
    "EnsembleState",
    "RoundRecord",
    "BaselineState",
    "uogd_step",
    "build_step_pool",
    "hedge_update",
    "optimistic_hedge_update",
    "meta_rate",
    "implicit_base_step",
    "combine",
    "make_ensemble_state",
    "ensemble_round",
    "fth_prior",
    "ftfwh_prior",
    "reweight_classify",
    "reweight_classify_batch",
]

VARIANTS = ("atlas", "atlas_ada")

# Relative slack for the prox divergence guard; the fixed 1/(1+eta*L) step
# guarantees descent mathematically, so any larger increase signals bad input.
_PROX_DIVERGENCE_SLACK = 1e-9


@dataclass(frozen=True)
class StepPool:
    """Geometrically spaced candidate step sizes with ratio exactly 2."""

    etas: np.ndarray
    variant: str

    def __post_init__(self):
        etas = np.asarray(self.etas, dtype=np.float64)
        if etas.ndim != 1 or etas.size < 1 or np.any(etas <= 0):
            raise InvalidInputError("step pool must hold at least one positive step")
        if etas.size > 1 and not np.all(etas[1:] == 2.0 * etas[:-1]):
            raise InvalidInputError("consecutive pool steps must have ratio exactly 2")
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"variant must be one of {VARIANTS}")
        etas = np.array(etas)
        etas.setflags(write=False)
        object.__setattr__(self, "etas", etas)

    @property
    def size(self) -> int:
        return self.etas.size


def build_step_pool(
    horizon: int,
    num_classes: int,
    diameter: float,
    grad_bound: float,
    sigma: float,
    variant: str,
) -> StepPool:
    """Candidate steps eta_1 * 2^(i-1) covering the unknown optimal step.

    atlas:     eta_1 = Gamma*sigma / (2G*sqrt(KT)),
               N = 1 + ceil(log2(1+2T)/2)
    atlas_ada: eta_1 = Gamma*sigma / sqrt(sigma^2 + 4G^2KT),
               N = 2 + ceil(log2(3T*(1+4G^2KT/sigma^2))/2)
    """
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")
    for name, v in (("num_classes", num_classes), ("diameter", diameter),
                    ("grad_bound", grad_bound), ("sigma", sigma)):
        if not v > 0:
            raise InvalidInputError(f"{name} must be positive")
    if variant not in VARIANTS:
        raise InvalidInputError(f"variant must be one of {VARIANTS}")
    kt = num_classes * horizon
    if variant == "atlas":
        base = diameter * sigma / (2.0 * grad_bound * math.sqrt(kt))
        n = 1 + math.ceil(0.5 * math.log2(1 + 2 * horizon))
    else:
        base = diameter * sigma / math.sqrt(sigma**2 + 4.0 * grad_bound**2 * kt)
        n = 2 + math.ceil(
            0.5 * math.log2(3 * horizon * (1 + 4.0 * grad_bound**2 * kt / sigma**2))
        )
    return StepPool(base * np.exp2(np.arange(n)), variant)


def uogd_step(
    params: ModelParams, grad: np.ndarray, eta: float, domain: DomainSpec
) -> ModelParams:
    """One projected gradient step on the risk estimator."""
    if not eta > 0:
        raise InvalidInputError("step size must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.weights.shape:
        raise InvalidInputError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient in uogd step")
    return ModelParams(project_weights(params.weights - eta * grad, domain.radius))


def hedge_update(cum_losses: np.ndarray, eps: float) -> np.ndarray:
    """Weights proportional to exp(-eps * cumulative loss), max-shifted."""
    cum = np.asarray(cum_losses, dtype=np.float64)
    if eps < 0:
        raise InvalidInputError("hedge learning rate must be >= 0")
    if not np.all(np.isfinite(cum)):
        raise NumericalError("non-finite cumulative losses in hedge update")
    z = -eps * cum
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def optimistic_hedge_update(
    cum_losses: np.ndarray, hint_losses: np.ndarray, eps: float
) -> np.ndarray:
    """Hedge with the hint evaluation injected as an extra loss."""
    cum = np.asarray(cum_losses, dtype=np.float64)
    hints = np.asarray(hint_losses, dtype=np.float64)
    if cum.shape != hints.shape:
        raise InvalidInputError("hint losses must align with cumulative losses")
    return hedge_update(cum + hints, eps)


def _self_confident_rate(pool_size: int, observed: float) -> float:
    return math.sqrt((math.log(pool_size) + 2.0) / (1.0 + observed))


def meta_rate(
    variant: str,
    pool_size: int,
    num_classes: int,
    horizon: int,
    loss_bound: float,
    sigma: float,
    observed: Optional[float] = None,
) -> float:
    """Meta learning rate.

    atlas uses the fixed rate (sigma/B) * sqrt((ln N + 2)/(KT)); atlas_ada
    uses the self-confident running rate sqrt((ln N + 2)/(1 + sum of squared
    risk/hint deviations observed so far)).
    """
    if variant not in VARIANTS:
        raise InvalidInputError(f"variant must be one of {VARIANTS}")
    if pool_size < 1 or num_classes < 1 or horizon < 1:
        raise InvalidInputError("pool size, classes, and horizon must be >= 1")
    if variant == "atlas":
        if not (loss_bound > 0 and sigma > 0):
            raise InvalidInputError("loss bound and sigma must be positive")
        lnn = math.log(pool_size) + 2.0
        return (sigma / loss_bound) * math.sqrt(lnn / (num_classes * horizon))
    total = float(observed) if observed is not None else 0.0
    if total < 0:
        raise InvalidInputError("observed deviation sum must be >= 0")
    return _self_confident_rate(pool_size, total)


@dataclass(frozen=True)
class ProxConfig:
    """Stopping rule for the implicit prox subproblem."""

    tol: float = 1e-8
    max_iters: int = 50


def _project_rows(stack: np.ndarray, radius: float) -> np.ndarray:
    if not math.isfinite(radius):
        return stack
    norms = np.sqrt((stack * stack).sum(axis=(1, 2)))
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return stack * scale[:, None, None]


def _prox_many(
    hat_stack: np.ndarray,
    hint: Optional[HintFunction],
    etas: np.ndarray,
    domain: DomainSpec,
    cfg: ProxConfig,
) -> np.ndarray:
    """Solve argmin_W eta_i H(w) + ||w - what_i||^2/2 for every learner at once.

    Projected gradient descent with the descent-safe fixed step
    1/(1 + eta_i * L_H); each learner freezes as soon as its fixed-point
    residual ||w - proj(what - eta grad H(w))|| drops below tolerance.
    """
    if hint is None or hint.is_zero():
        return hat_stack.copy()
    r = domain.radius
    steps = 1.0 / (1.0 + etas * hint.curvature_bound())
    w = hat_stack.copy()
    start_obj = etas * hint.values_many(w)  # ||w - what||^2 is zero at the start
    active = np.arange(etas.size)
    for _ in range(cfg.max_iters):
        # only unconverged learners are evaluated; converged ones stay frozen
        wa, ha, ea = w[active], hat_stack[active], etas[active]
        grads = hint.gradients_many(wa)
        target = _project_rows(ha - ea[:, None, None] * grads, r)
        resid = np.sqrt(((wa - target) ** 2).sum(axis=(1, 2)))
        keep = resid > cfg.tol
        if not keep.any():
            break
        active = active[keep]
        wa, ha, ea, grads = wa[keep], ha[keep], ea[keep], grads[keep]
        descent = ea[:, None, None] * grads + (wa - ha)
        w[active] = _project_rows(wa - steps[active][:, None, None] * descent, r)
    # the 1/(1 + eta L) step guarantees monotone descent, so a single exit
    # check is enough to certify the output and catch divergence
    diff = w - hat_stack
    end_obj = etas * hint.values_many(w) + 0.5 * (diff * diff).sum(axis=(1, 2))
    if np.any(end_obj > start_obj + _PROX_DIVERGENCE_SLACK * (1.0 + np.abs(start_obj))):
        raise NumericalError("prox subproblem diverged (objective increased)")
    return w


def implicit_base_step(
    w_hat: ModelParams,
    grad_prev: np.ndarray,
    hint: Optional[HintFunction],
    eta: float,
    domain: DomainSpec,
    prox_config: ProxConfig = ProxConfig(),
) -> tuple[ModelParams, ModelParams]:
    """Gradient step on the intermediate iterate, then the implicit hint step.

    Returns (what_next, w_next) where what_next is the projected gradient
    step and w_next minimizes eta*H(w) + ||w - what_next||^2/2 over the
    domain.  With a zero hint the prox is exact and w_next == what_next.
    """
    if not eta > 0:
        raise InvalidInputError("step size must be positive")
    grad_prev = np.asarray(grad_prev, dtype=np.float64)
    if not np.all(np.isfinite(grad_prev)):
        raise NumericalError("non-finite gradient in implicit base step")
    hat_next = project_weights(w_hat.weights - eta * grad_prev, domain.radius)
    w_next = _prox_many(
        hat_next[None], hint, np.array([eta]), domain, prox_config
    )[0]
    return ModelParams(hat_next), ModelParams(w_next)


def combine(weights: np.ndarray, base_params: Sequence[ModelParams]) -> ModelParams:
    """Convex combination of base models; stays inside the ball by convexity."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(base_params) != w.size:
        raise InvalidInputError("weights must align with the base model list")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidInputError("weights must form a probability vector")
    stack = np.stack([p.weights for p in base_params])
    return ModelParams(np.einsum("n,nkd->kd", w, stack))


@dataclass(frozen=True)
class EnsembleConfig:
    """Static wiring of one ensemble run.

    ``fixed_eps = None`` selects the self-confident meta rate driven by the
    reference-centered deviations max_i |(R_t(w_{t,i}) - R_t(w_t)) -
    (H_t(w_{t,i}) - H_t(w_t))| (H = 0 when no hints are wired); a float pins
    the rate instead.
    """

    pool: StepPool
    domain: DomainSpec
    sigma: float
    fixed_eps: Optional[float] = None
    prox: ProxConfig = ProxConfig()

    def __post_init__(self):
        if self.fixed_eps is not None and self.fixed_eps < 0:
            raise InvalidInputError("fixed meta rate must be >= 0")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")


@dataclass(frozen=True)
class RoundRecord:
    """Everything the harness wants to log about one completed round."""

    round_index: int
    weights: np.ndarray
    deployed: ModelParams
    raw_prior: RawPriorEstimate
    risk_values: np.ndarray
    mixture_risk: float
    eps: float
    hint_prior: Optional[np.ndarray] = None
    hint_values: Optional[np.ndarray] = None
    deployed_risk: Optional[float] = None
    hint_deviation: Optional[float] = None


@dataclass(frozen=True)
class EnsembleState:
    """Mutable-by-replacement ensemble state between rounds.

    ``hat_params`` holds the intermediate iterates (equal to the base models
    when no hints are in play); ``round_index`` is the 1-based index of the
    round the state is about to play.
    """

    config: EnsembleConfig
    hat_params: np.ndarray  # (N, K, d+1)
    cum_losses: np.ndarray  # (N,)
    round_index: int = 1
    weights: Optional[np.ndarray] = None  # weights played in the last round
    hint_dev_sumsq: float = 0.0
    last: Optional[RoundRecord] = None

    @property
    def pool_size(self) -> int:
        return self.config.pool.size

    def base_models(self) -> list[ModelParams]:
        return [ModelParams(w) for w in self.hat_params]


def make_ensemble_state(config: EnsembleConfig, initial: ModelParams) -> EnsembleState:
    n = config.pool.size
    hat = np.tile(initial.weights, (n, 1, 1))
    return EnsembleState(config, hat, np.zeros(n))


def ensemble_round(
    state: EnsembleState,
    batch_features: np.ndarray,
    f0: ModelParams,
    confusion: ConfusionMatrix,
    pcr_provider: PerClassRiskProvider,
    hint_provider: Optional[HintProvider] = None,
) -> tuple[ModelParams, EnsembleState]:
    """Play one round and return (deployed model, successor state).

    Order: form this round's hint, run the implicit step, compute meta
    weights, deploy the combined model, then consume the batch to build the
    risk estimate that drives every update.  Only the transductive forward
    hint reads the batch before deployment.
    """
    cfg = state.config
    t = state.round_index
    etas = cfg.pool.etas
    n = etas.size

    raw: Optional[RawPriorEstimate] = None
    hint: Optional[HintFunction] = None
    if hint_provider is not None:
        prior = hint_provider.prior_for_round(t)
        if prior is None:
            hist = predicted_histogram(f0, batch_features)
            raw = estimate_prior(confusion, hist)
            prior = hint_provider.transductive_prior(raw)
        hint = HintFunction(
            cap_hint_prior(prior, cfg.sigma),
            pcr_provider,
            transductive=hint_provider.transductive,
            kind=hint_provider.kind,
        )

    if hint is not None:
        w_stack = _prox_many(state.hat_params, hint, etas, cfg.domain, cfg.prox)
    else:
        w_stack = state.hat_params

    hint_vals = hint.values_many(w_stack) if hint is not None else np.zeros(n)
    eps = (
        cfg.fixed_eps
        if cfg.fixed_eps is not None
        else _self_confident_rate(n, state.hint_dev_sumsq)
    )
    weights = optimistic_hedge_update(state.cum_losses, hint_vals, eps)

    deployed_w = np.einsum("n,nkd->kd", weights, w_stack)
    deployed = ModelParams(deployed_w)

    if raw is None:
        hist = predicted_histogram(f0, batch_features)
        raw = estimate_prior(confusion, hist)

    self_confident = cfg.fixed_eps is None
    if self_confident:
        # evaluate the deployed model in the same pass as the base models;
        # its gradient row is discarded
        vals, grads = pcr_provider.per_class_values_and_weighted_grad_many(
            np.concatenate([w_stack, deployed_w[None]]), raw.entries
        )
        dep_vals = vals[-1]
        vals, risk_grads = vals[:-1], grads[:-1]
    else:
        vals, risk_grads = pcr_provider.per_class_values_and_weighted_grad_many(
            w_stack, raw.entries
        )
    risk_values = vals @ raw.entries

    deployed_risk = None
    deviation = None
    new_sumsq = state.hint_dev_sumsq
    if self_confident:
        deployed_risk = float(raw.entries @ dep_vals)
        hint_dep = float(hint.prior @ dep_vals) if hint is not None else 0.0
        deviation = float(
            np.max(np.abs((risk_values - deployed_risk) - (hint_vals - hint_dep)))
        )
        new_sumsq = state.hint_dev_sumsq + deviation**2

    new_cum = state.cum_losses + risk_values
    new_hat = _project_rows(
        state.hat_params - etas[:, None, None] * risk_grads, cfg.domain.radius
    )

    if hint_provider is not None:
        hint_provider.observe(t, batch_features, raw)

    record = RoundRecord(
        round_index=t,
        weights=weights,
        deployed=deployed,
        raw_prior=raw,
        risk_values=risk_values,
        mixture_risk=float(weights @ risk_values),
        eps=float(eps),
        hint_prior=None if hint is None else hint.prior,
        hint_values=hint_vals,
        deployed_risk=deployed_risk,
        hint_deviation=deviation,
    )
    new_state = replace(
        state,
        hat_params=new_hat,
        cum_losses=new_cum,
        round_index=t + 1,
        weights=weights,
        hint_dev_sumsq=new_sumsq,
        last=record,
    )
    return deployed, new_state


@dataclass
class BaselineState:
    """State of the follow-the-history reweighting baselines.

    ``prior_history`` holds simplex-projected estimates from finished
    rounds; the probability model is the initial classifier's softmax
    output.
    """

    offline_prior: PriorVector
    prob_model: ModelParams
    prior_history: list = field(default_factory=list)


def fth_prior(state: BaselineState) -> PriorVector:
    """Mean of all previously estimated priors; offline prior when empty."""
    if not state.prior_history:
        return state.offline_prior
    stacked = np.stack([p.entries for p in state.prior_history])
    return PriorVector(stacked.mean(axis=0))


def ftfwh_prior(state: BaselineState, window_len: int) -> PriorVector:
    """Mean over a sliding window of estimated priors; offline prior when empty."""
    if window_len < 1:
        raise InvalidInputError("window length must be >= 1")
    if not state.prior_history:
        return state.offline_prior
    recent = state.prior_history[-min(window_len, len(state.prior_history)):]
    stacked = np.stack([p.entries for p in recent])
    return PriorVector(stacked.mean(axis=0))


def reweight_classify(
    prob_outputs: np.ndarray,
    target_prior: PriorVector,
    offline_prior: PriorVector,
) -> int:
    """argmax_k (target_k / offline_k) * prob_k, ties toward the smallest index.

    The normalization factor is argmax-invariant and omitted.
    """
    probs = np.asarray(prob_outputs, dtype=np.float64)
    if probs.shape != (target_prior.k,):
        raise InvalidInputError("probability vector dimension mismatch")
    return int(reweight_classify_batch(probs[None], target_prior, offline_prior)[0])


def reweight_classify_batch(
    probs: np.ndarray, target_prior: PriorVector, offline_prior: PriorVector
) -> np.ndarray:
    if np.any(offline_prior.entries <= 0.0):
        raise InvalidInputError("offline prior entries must be positive for reweighting")
    ratios = target_prior.entries / offline_prior.entries
    return np.argmax(np.asarray(probs, dtype=np.float64) * ratios, axis=1) + 1
