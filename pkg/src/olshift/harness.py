"""Experiment runner: offline initialization, online protocol, metrics,
dynamic-regret diagnostics, and CSV/JSON persistence.

Protocol hygiene: every learner update path receives a bare feature matrix;
hidden labels are read only by the error metric and the regret diagnostic.
All randomness flows from the config seed through named substreams
(``offline``, ``schedule``, ``stream``) so one component's draws never
perturb another's.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import (
    InvalidInputError,
    LabeledDataset,
    OnlineBatch,
    PriorVector,
    SchemaError,
    ShiftTrace,
    UnsupportedDiagnosticError,
    simplex_project,
)
from .estimator import (
    ConfusionMatrix,
    estimate_confusion,
    estimate_prior,
    predicted_histogram,
    regularize_and_invertibility,
)
from .hints import HintProvider
from .learners import (
    BaselineState,
    EnsembleConfig,
    EnsembleState,
    ProxConfig,
    build_step_pool,
    ensemble_round,
    make_ensemble_state,
    meta_rate,
    reweight_classify_batch,
    uogd_step,
)
from .model import (
    DomainSpec,
    LossConstants,
    ModelParams,
    OfflineOptConfig,
    PerClassRiskProvider,
    estimate_constants,
    predict_labels_batch,
    project_weights,
    softmax_probs_batch,
    train_offline,
)
from .shiftsim import (
    BENCHMARK_VERSION,
    ShiftSchedule,
    alpha_at,
    default_gaussian_model,
    default_priors,
    load_dataset_csv,
    prior_at,
    sample_batch,
    sample_labeled,
    schedule_init,
    substream,
)

__all__ = [
    "ALGORITHMS",
    "RunConfig",
    "OfflinePhase",
    "RunResult",
    "average_error",
    "prepare_offline",
    "run_experiment",
    "run_many",
    "dynamic_regret_gaps",
    "dynamic_regret_diagnostic",
    "write_outputs",
    "read_rounds_csv",
    "read_summary_csv",
]

ALGORITHMS = ("fix", "fth", "ftfwh", "uogd", "atlas", "atlas_ada")

#: Lin comparators are cached on priors quantized to this grid.
_PRIOR_QUANTUM = 1e-3


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved description of one experiment (all seeds)."""

    algorithm: str = "atlas"
    horizon: int = 10000
    batch_size: int = 100
    offline_size: int = 1500
    seeds: tuple = (1, 2, 3, 4, 5)
    schedule_kind: str = "squ"
    schedule_period: Optional[int] = None  # default: ~sqrt(T), even
    schedule_flip_prob: Optional[float] = None  # default: 1/sqrt(T)
    data_source: str = "synthetic"
    csv_path: Optional[str] = None
    num_classes: int = 3
    dim: int = 12
    out_dir: Optional[str] = None
    domain_radius: Optional[float] = None
    sigma_floor: float = 1e-3
    safety_factor: float = 2.0
    algo_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise SchemaError(f"algorithm must be one of {ALGORITHMS}")
        if self.horizon < 1 or self.batch_size < 1 or self.offline_size < 1:
            raise SchemaError("horizon, batch size, and offline size must be >= 1")
        if not self.seeds:
            raise SchemaError("at least one seed is required")
        if self.data_source not in ("synthetic", "csv"):
            raise SchemaError("data source must be 'synthetic' or 'csv'")
        if self.data_source == "csv" and not self.csv_path:
            raise SchemaError("csv data source needs csv_path")
        if self.domain_radius is not None and not self.domain_radius > 0:
            raise SchemaError("domain radius override must be positive")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def resolved_period(self) -> int:
        if self.schedule_period is not None:
            return int(self.schedule_period)
        return 2 * max(1, round(math.sqrt(self.horizon) / 2))

    def resolved_flip_prob(self) -> float:
        if self.schedule_flip_prob is not None:
            return float(self.schedule_flip_prob)
        return 1.0 / math.sqrt(self.horizon)

    def schedule(self) -> ShiftSchedule:
        mu1, mu2 = default_priors(self.num_classes)
        period = self.resolved_period() if self.schedule_kind in ("squ", "sin") else None
        flip = self.resolved_flip_prob() if self.schedule_kind == "ber" else None
        return ShiftSchedule(
            self.schedule_kind, mu1, mu2, self.horizon, period=period, flip_prob=flip
        )

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "horizon": self.horizon,
            "batch_size": self.batch_size,
            "offline_size": self.offline_size,
            "seeds": list(self.seeds),
            "schedule_kind": self.schedule_kind,
            "schedule_period": self.schedule_period,
            "schedule_flip_prob": self.schedule_flip_prob,
            "data_source": self.data_source,
            "csv_path": self.csv_path,
            "num_classes": self.num_classes,
            "dim": self.dim,
            "out_dir": self.out_dir,
            "domain_radius": self.domain_radius,
            "sigma_floor": self.sigma_floor,
            "safety_factor": self.safety_factor,
            "algo_params": dict(self.algo_params),
        }

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise SchemaError("config must be a JSON object")
        known = {f for f in RunConfig.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        cleaned = {k: v for k, v in raw.items() if v is not None or k in ("out_dir",)}
        if "seeds" in cleaned:
            cleaned["seeds"] = tuple(cleaned["seeds"])
        try:
            return RunConfig(**cleaned)
        except TypeError as exc:
            raise SchemaError(f"bad config: {exc}") from None


@dataclass
class OfflinePhase:
    """Everything computed once from the offline labeled set."""

    f0: ModelParams
    domain: DomainSpec
    constants: LossConstants
    confusion: ConfusionMatrix
    provider: PerClassRiskProvider
    offline_prior: PriorVector
    kappa: float  # smallest offline class prior (bias-bound diagnostic)
    offline: LabeledDataset

    @property
    def sigma(self) -> float:
        return self.confusion.min_singular


@dataclass
class RunResult:
    """Per-round records plus the one-line summary for one seed."""

    seed: int
    algorithm: str
    instant_errors: np.ndarray
    avg_errors: np.ndarray
    deployed_norms: Optional[np.ndarray]
    est_priors: Optional[np.ndarray]  # (T, K), simplex-projected
    ensemble_weights: Optional[np.ndarray]  # (T, N)
    deployed_trajectory: Optional[np.ndarray]  # (T, K, d+1)
    trace: Optional[ShiftTrace]
    summary: dict
    offline: Optional[OfflinePhase] = None


def average_error(
    predictions: Sequence[np.ndarray],
    hidden_labels: Sequence[np.ndarray],
    sizes: Optional[Sequence[int]] = None,
) -> float:
    """Mean over rounds of the per-round misclassification rates.

    Rounds are weighted equally regardless of batch size.
    """
    if len(predictions) != len(hidden_labels):
        raise InvalidInputError("predictions and labels must align per round")
    if sizes is not None and list(sizes) != [len(p) for p in predictions]:
        raise InvalidInputError("declared round sizes do not match predictions")
    if not predictions:
        raise InvalidInputError("average error over zero rounds is undefined")
    rates = []
    for preds, labels in zip(predictions, hidden_labels):
        preds = np.asarray(preds)
        labels = np.asarray(labels)
        if preds.shape != labels.shape:
            raise InvalidInputError("round predictions and labels must align")
        rates.append(float(np.mean(preds != labels)))
    return float(np.mean(rates))


def _class_pools(dataset: LabeledDataset) -> list:
    return [
        dataset.features[dataset.labels == c + 1]
        for c in range(dataset.num_classes)
    ]


def _pool_batch(pools, prior: PriorVector, n: int, rng) -> OnlineBatch:
    edges = np.cumsum(prior.entries)
    edges[-1] = 1.0
    labels = np.searchsorted(edges, rng.random(n), side="right").astype(np.int64) + 1
    rows = np.empty((n, pools[0].shape[1]))
    for c in range(prior.k):
        mask = labels == c + 1
        cnt = int(mask.sum())
        if cnt:
            rows[mask] = pools[c][rng.integers(0, pools[c].shape[0], size=cnt)]
    return OnlineBatch(rows, labels)


def prepare_offline(config: RunConfig, seed: int) -> OfflinePhase:
    """Sample/load the offline set, fit f0, and estimate every constant."""
    rng = substream(seed, "offline")
    mu1, _ = default_priors(config.num_classes)
    if config.data_source == "synthetic":
        class_model = default_gaussian_model(config.num_classes, config.dim)
        offline = sample_labeled(mu1, class_model, config.offline_size, rng)
    else:
        pool = load_dataset_csv(config.csv_path)
        batch = _pool_batch(_class_pools(pool), PriorVector.uniform(pool.num_classes),
                            config.offline_size, rng)
        offline = LabeledDataset(batch.features, batch.hidden_labels, pool.num_classes)
    f0 = train_offline(offline, DomainSpec.unbounded(), OfflineOptConfig())
    radius = config.domain_radius
    if radius is None:
        radius = 2.0 * max(1.0, f0.norm)
    domain = DomainSpec(radius)
    f0 = ModelParams(project_weights(f0.weights, domain.radius))
    constants = estimate_constants(f0, offline, domain, config.safety_factor)
    confusion = regularize_and_invertibility(
        estimate_confusion(f0, offline), config.sigma_floor
    )
    prior = offline.empirical_prior()
    return OfflinePhase(
        f0=f0,
        domain=domain,
        constants=constants,
        confusion=confusion,
        provider=PerClassRiskProvider(offline),
        offline_prior=prior,
        kappa=float(prior.entries.min()),
        offline=offline,
    )


class _FixPolicy:
    name = "fix"

    def __init__(self, off: OfflinePhase):
        self.f0 = off.f0

    def step(self, features):
        preds = predict_labels_batch(self.f0, features)
        return self.f0, preds, {}


class _ReweightPolicy:
    """FTH / FTFWH: reweight f0's softmax outputs by estimated priors.

    The followed-history means are maintained incrementally (a running sum
    for the full history, a ring sum for the window); rebuilding them from
    the history list every round would cost O(T^2) over a run.
    """

    def __init__(self, off: OfflinePhase, window: Optional[int]):
        self.off = off
        self.window = window
        self.name = "fth" if window is None else "ftfwh"
        self.state = BaselineState(off.offline_prior, off.f0)
        self._sum = np.zeros(off.offline_prior.k)

    def _target(self) -> PriorVector:
        history = self.state.prior_history
        if not history:
            return self.state.offline_prior
        count = len(history) if self.window is None else min(self.window, len(history))
        return PriorVector(self._sum / count)

    def step(self, features):
        target = self._target()
        probs = softmax_probs_batch(self.off.f0, features)
        preds = reweight_classify_batch(probs, target, self.off.offline_prior)
        # the predicted-label histogram reuses the argmax already computed
        counts = np.bincount(probs.argmax(axis=1), minlength=target.k)
        hist = PriorVector(counts / features.shape[0])
        raw = estimate_prior(self.off.confusion, hist)
        projected = raw.projected()
        self.state.prior_history.append(projected)
        self._sum += projected.entries
        if self.window is not None and len(self.state.prior_history) > self.window:
            self._sum -= self.state.prior_history[
                len(self.state.prior_history) - self.window - 1
            ].entries
        return None, preds, {"est_prior": projected.entries}


class _UogdPolicy:
    name = "uogd"

    def __init__(self, off: OfflinePhase, horizon: int, eta: Optional[float] = None):
        self.off = off
        if eta is None:
            # step size Gamma / (G sqrt(T)) from the static tuning
            eta = off.domain.diameter / (off.constants.grad_bound * math.sqrt(horizon))
        self.eta = float(eta)
        self.params = off.f0

    def step(self, features):
        deployed = self.params
        preds = predict_labels_batch(deployed, features)
        raw = estimate_prior(self.off.confusion, predicted_histogram(self.off.f0, features))
        _, grads = self.off.provider.weighted_risk_many(
            deployed.weights[None], raw.entries
        )
        self.params = uogd_step(deployed, grads[0], self.eta, self.off.domain)
        return deployed, preds, {"est_prior": raw.projected().entries}


class _EnsemblePolicy:
    def __init__(self, off: OfflinePhase, config: RunConfig, variant: str):
        self.off = off
        self.name = variant
        params = dict(config.algo_params)
        pool = build_step_pool(
            config.horizon,
            off.offline.num_classes,
            off.domain.diameter,
            off.constants.grad_bound,
            off.sigma,
            params.get("pool_variant", variant),
        )
        fixed_eps = params.get("eps")
        if fixed_eps == "fixed":  # the horizon-tuned fixed Hedge rate
            fixed_eps = meta_rate(
                "atlas", pool.size, off.offline.num_classes, config.horizon,
                off.constants.loss_bound, off.sigma,
            )
        prox = ProxConfig(max_iters=int(params.get("prox_iters", 50)))
        ens_cfg = EnsembleConfig(
            pool, off.domain, off.sigma, fixed_eps=fixed_eps, prox=prox
        )
        if variant == "atlas":
            self.hints = None
        else:
            self.hints = HintProvider(
                params.get("hint", "periodic"),
                off.offline_prior,
                window=int(params.get("hint_window", 100)),
                period=int(params.get("hint_period", 40)),
                prototypes=int(params.get("hint_prototypes", 4)),
                mix=params.get("hint_mix"),
            )
        self.state: EnsembleState = make_ensemble_state(ens_cfg, off.f0)
        self.pool = pool

    def step(self, features):
        deployed, self.state = ensemble_round(
            self.state, features, self.off.f0, self.off.confusion,
            self.off.provider, self.hints,
        )
        preds = predict_labels_batch(deployed, features)
        rec = self.state.last
        return deployed, preds, {
            "est_prior": simplex_project(rec.raw_prior.entries).entries,
            "weights": rec.weights,
            "mixture_risk": rec.mixture_risk,
        }


def _make_policy(config: RunConfig, off: OfflinePhase):
    algo = config.algorithm
    if algo == "fix":
        return _FixPolicy(off)
    if algo == "fth":
        return _ReweightPolicy(off, None)
    if algo == "ftfwh":
        return _ReweightPolicy(off, int(config.algo_params.get("window", 100)))
    if algo == "uogd":
        return _UogdPolicy(off, config.horizon, config.algo_params.get("eta"))
    return _EnsemblePolicy(off, config, algo)


def run_experiment(config: RunConfig, seed: Optional[int] = None) -> RunResult:
    """Offline phase, then T deploy/classify/update rounds; deterministic per seed."""
    seed = int(config.seeds[0] if seed is None else seed)
    started = time.perf_counter()
    off = prepare_offline(config, seed)
    schedule = config.schedule()
    sched_state = schedule_init(schedule, seed)
    stream_rng = substream(seed, "stream")
    if config.data_source == "synthetic":
        class_model = default_gaussian_model(config.num_classes, config.dim)
        pools = None
    else:
        class_model = None
        pools = _class_pools(off.offline)  # resample the offline pool's classes

    policy = _make_policy(config, off)
    t_total = config.horizon
    k = schedule.k
    instant = np.empty(t_total)
    norms = np.full(t_total, np.nan)
    est_priors = np.full((t_total, k), np.nan)
    pool_size = policy.pool.size if isinstance(policy, _EnsemblePolicy) else 0
    weights = np.full((t_total, pool_size), np.nan) if pool_size else None
    trajectory = (
        np.empty((t_total, k, off.f0.dim + 1))
        if config.algorithm in ("fix", "uogd", "atlas", "atlas_ada")
        else None
    )
    mixture_risks = np.zeros(t_total)
    priors_seen = []
    prior_cache = {}  # squ/sin/ber revisit a handful of alphas

    for t in range(1, t_total + 1):
        alpha, sched_state = alpha_at(schedule, t, sched_state)
        prior = prior_cache.get(alpha)
        if prior is None:
            prior = prior_at(alpha, schedule.mu1, schedule.mu2)
            prior_cache[alpha] = prior
        priors_seen.append(prior)
        if class_model is not None:
            batch, stream_rng = sample_batch(prior, class_model, config.batch_size, stream_rng)
        else:
            batch = _pool_batch(pools, prior, config.batch_size, stream_rng)
        deployed, preds, info = policy.step(batch.features)
        instant[t - 1] = float(np.mean(preds != batch.hidden_labels))
        if deployed is not None:
            norms[t - 1] = deployed.norm
            if trajectory is not None:
                trajectory[t - 1] = deployed.weights
        if "est_prior" in info:
            est_priors[t - 1] = info["est_prior"]
        if weights is not None:
            weights[t - 1] = info["weights"]
            mixture_risks[t - 1] = info["mixture_risk"]

    avg = np.cumsum(instant) / np.arange(1, t_total + 1)
    trace = ShiftTrace(tuple(priors_seen))
    summary = {
        "seed": seed,
        "algorithm": config.algorithm,
        "shift": config.schedule_kind,
        "final_avg_error": float(avg[-1]),
        "variation": trace.variation,
        "wall_time_s": time.perf_counter() - started,
        "sigma": off.sigma,
        "grad_bound": off.constants.grad_bound,
        "loss_bound": off.constants.loss_bound,
        "domain_radius": off.domain.radius,
        "kappa": off.kappa,
        "benchmark_version": BENCHMARK_VERSION,
        "library_version": __version__,
    }
    if isinstance(policy, _EnsemblePolicy):
        cum = policy.state.cum_losses
        meta_regret = float(mixture_risks.sum() - cum.min())
        n = policy.pool.size
        bound = (
            2.0 * off.constants.loss_bound / off.sigma
            * math.sqrt((math.log(n) + 2.0) * k * t_total)
        )
        summary.update(
            pool_size=n,
            pool_eta_min=float(policy.pool.etas[0]),
            pool_eta_max=float(policy.pool.etas[-1]),
            meta_regret=meta_regret,
            meta_regret_bound=bound,
            meta_regret_ok=bool(meta_regret <= bound),
        )
        if policy.hints is not None:
            summary.update(
                hint_kind=policy.hints.kind,
                hint_transductive=policy.hints.transductive,
            )
    has_priors = config.algorithm != "fix"
    return RunResult(
        seed=seed,
        algorithm=config.algorithm,
        instant_errors=instant,
        avg_errors=avg,
        deployed_norms=norms if trajectory is not None else None,
        est_priors=est_priors if has_priors else None,
        ensemble_weights=weights,
        deployed_trajectory=trajectory,
        trace=trace,
        summary=summary,
        offline=off,
    )


def _run_one(args) -> RunResult:
    config, seed = args
    return run_experiment(config, seed)


def run_many(config: RunConfig, parallel: bool = True) -> list:
    """One run per configured seed; seeds execute in parallel processes."""
    jobs = [(config, s) for s in config.seeds]
    if not parallel or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    workers = min(len(jobs), os.cpu_count() or 1)
    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    except (OSError, PermissionError):
        return [_run_one(j) for j in jobs]


def _quantize_prior(entries: np.ndarray) -> tuple:
    return tuple(np.round(entries / _PRIOR_QUANTUM).astype(np.int64).tolist())


class _ComparatorCache:
    """Per-prior risk minimizers over the ball, solved by projected GD."""

    def __init__(self, provider: PerClassRiskProvider, domain: DomainSpec,
                 init: ModelParams, tol: float = 1e-6, max_iters: int = 5000):
        self.provider = provider
        self.domain = domain
        self.tol = tol
        self.max_iters = max_iters
        self._warm = init.weights
        self._cache = {}

    def solve(self, mu: np.ndarray) -> tuple[np.ndarray, float]:
        key = _quantize_prior(mu)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        mu = np.asarray(key, dtype=np.float64) * _PRIOR_QUANTUM
        # accelerated projected descent; plain 1/L steps stall near boundary
        # minimizers long before the unit-step mapping residual reaches tol
        step = 1.0 / self.provider.curvature_unit()
        radius = self.domain.radius
        w = self._warm.copy()
        y = w.copy()
        tau = 1.0
        for _ in range(self.max_iters):
            _, g = self.provider.weighted_risk_many(y[None], mu)
            w_new = project_weights(y - step * g[0], radius)
            _, gw = self.provider.weighted_risk_many(w_new[None], mu)
            resid = float(np.linalg.norm(
                w_new - project_weights(w_new - gw[0], radius)
            ))
            tau_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tau * tau))
            y = w_new + ((tau - 1.0) / tau_new) * (w_new - w)
            w, tau = w_new, tau_new
            if resid <= self.tol:
                break
        value, _ = self.provider.weighted_risk_many(w[None], mu, with_gradients=False)
        self._cache[key] = (w, float(value[0]))
        self._warm = w
        return self._cache[key]


def dynamic_regret_gaps(
    run: RunResult,
    trace: Optional[ShiftTrace] = None,
    provider: Optional[PerClassRiskProvider] = None,
    domain: Optional[DomainSpec] = None,
) -> np.ndarray:
    """Per-round risk gap to the best response, on quantized true priors.

    R_t is the true-prior-weighted combination of the offline per-class
    risks; the comparator is its cached projected-GD minimizer.  Priors are
    quantized to the cache grid in both terms, so every gap is nonnegative
    up to solver tolerance.
    """
    trace = trace if trace is not None else run.trace
    if trace is None:
        raise UnsupportedDiagnosticError("true priors are unavailable for this run")
    if run.deployed_trajectory is None:
        raise UnsupportedDiagnosticError(
            f"algorithm {run.algorithm!r} has no parameter trajectory"
        )
    if run.offline is None and (provider is None or domain is None):
        raise UnsupportedDiagnosticError("offline phase unavailable for diagnostics")
    provider = provider if provider is not None else run.offline.provider
    domain = domain if domain is not None else run.offline.domain
    t_total = run.deployed_trajectory.shape[0]
    if len(trace) != t_total:
        raise InvalidInputError("trace length does not match trajectory")
    cache = _ComparatorCache(provider, domain, ModelParams(run.deployed_trajectory[0]))
    gaps = np.empty(t_total)
    for t in range(t_total):
        mu_q = np.asarray(_quantize_prior(trace.priors[t].entries), dtype=np.float64)
        mu_q *= _PRIOR_QUANTUM
        _, best = cache.solve(trace.priors[t].entries)
        vals = provider.values(run.deployed_trajectory[t])
        gaps[t] = float(mu_q @ vals) - best
    return gaps


def dynamic_regret_diagnostic(
    run: RunResult,
    trace: Optional[ShiftTrace] = None,
    provider: Optional[PerClassRiskProvider] = None,
    domain: Optional[DomainSpec] = None,
) -> float:
    """Total dynamic-regret gap over the run (see :func:`dynamic_regret_gaps`)."""
    return float(dynamic_regret_gaps(run, trace, provider, domain).sum())


def _format(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_outputs(results, config: RunConfig) -> dict:
    """Write rounds CSVs, the per-seed summary, and the manifest.

    Returns the mapping of logical names to written paths.  A single result
    writes ``rounds.csv``; multiple results write ``rounds_seed<seed>.csv``.
    """
    if isinstance(results, RunResult):
        results = [results]
    if config.out_dir is None:
        raise InvalidInputError("config.out_dir must be set to write outputs")
    os.makedirs(config.out_dir, exist_ok=True)
    written = {}
    for res in results:
        name = "rounds.csv" if len(results) == 1 else f"rounds_seed{res.seed}.csv"
        path = os.path.join(config.out_dir, name)
        _write_rounds(res, path)
        written[name] = path
    summary_path = os.path.join(config.out_dir, "summary.csv")
    keys = sorted({k for r in results for k in r.summary})
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for res in results:
            writer.writerow([_format(res.summary.get(k, "")) for k in keys])
    written["summary.csv"] = summary_path
    manifest_path = os.path.join(config.out_dir, "manifest.json")
    manifest = {
        "config": config.to_dict(),
        "library_version": __version__,
        "benchmark_version": BENCHMARK_VERSION,
        "seeds": [r.seed for r in results],
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    written["manifest.json"] = manifest_path
    return written


def _write_rounds(res: RunResult, path: str) -> None:
    t_total = res.instant_errors.size
    header = ["t", "instant_error", "avg_error"]
    cols = [np.arange(1, t_total + 1), res.instant_errors, res.avg_errors]
    if res.deployed_norms is not None:
        header.append("deployed_norm")
        cols.append(res.deployed_norms)
    if res.est_priors is not None:
        for k in range(res.est_priors.shape[1]):
            header.append(f"est_prior_{k + 1}")
            cols.append(res.est_priors[:, k])
    if res.ensemble_weights is not None:
        for i in range(res.ensemble_weights.shape[1]):
            header.append(f"weight_{i + 1}")
            cols.append(res.ensemble_weights[:, i])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([_format(v if not isinstance(v, np.generic) else v.item())
                             for v in row])


def read_rounds_csv(path: str) -> dict:
    """Parse a rounds file back into column arrays (exact float round-trip)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in row] for row in reader]
    data = np.array(rows)
    return {name: data[:, i] for i, name in enumerate(header)}


def read_summary_csv(path: str) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
