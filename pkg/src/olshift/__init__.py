"""olshift: online label-shift adaptation with adaptive online ensembles.

The library covers the full desk-scale pipeline: an unbiased risk estimator
built from confusion-matrix prior estimation, projected online gradient
descent on that estimator, step-size-pool ensembles with (optimistic) Hedge
meta updates, hint functions for structured shift, shift-stream simulators,
follow-the-history baselines, and the verification oracles used by the test
suite.
"""

__version__ = "0.1.0"

from .core import (
    DegenerateConfusionError,
    InvalidInputError,
    LabeledDataset,
    LabeledSample,
    MissingClassError,
    NumericalError,
    OnlineBatch,
    ParseError,
    PriorVector,
    RawPriorEstimate,
    SchemaError,
    ShiftTrace,
    UnsupportedDiagnosticError,
    l1_variation,
    simplex_project,
)
from .model import (
    DomainSpec,
    LossConstants,
    ModelParams,
    OfflineOptConfig,
    PerClassRiskProvider,
    PerClassRisks,
    estimate_constants,
    per_class_risks,
    predict_label,
    predict_scores,
    project_to_domain,
    surrogate_loss,
    surrogate_loss_gradient,
    train_offline,
)
from .estimator import (
    ConfusionMatrix,
    RiskEstimate,
    estimate_confusion,
    estimate_prior,
    predicted_histogram,
    regularize_and_invertibility,
    unbiased_risk,
)
from .learners import (
    BaselineState,
    EnsembleConfig,
    EnsembleState,
    ProxConfig,
    StepPool,
    build_step_pool,
    combine,
    ensemble_round,
    fth_prior,
    ftfwh_prior,
    hedge_update,
    implicit_base_step,
    make_ensemble_state,
    meta_rate,
    optimistic_hedge_update,
    reweight_classify,
    uogd_step,
)
from .hints import (
    HintFunction,
    HintProvider,
    PeriodicBuffer,
    PrototypeBank,
    forward_hint,
    hint_eval,
    okm_hint,
    periodic_hint,
    window_hint,
)
from .shiftsim import (
    GaussianClassModel,
    ShiftSchedule,
    alpha_at,
    default_gaussian_model,
    default_priors,
    load_dataset_csv,
    prior_at,
    sample_batch,
    trace_of,
)
from .harness import (
    RunConfig,
    RunResult,
    average_error,
    dynamic_regret_diagnostic,
    run_experiment,
    run_many,
    write_outputs,
)
