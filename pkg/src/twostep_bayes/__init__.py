"""Two-step priors for Bayesian model selection.

A model-index prior with weights exp(-T n delta^2_{n,m}) is combined with
within-model priors for four regression applications (isotonic, max-affine
convex, trace/factor, partially linear).  The package provides the priors,
trans-dimensional samplers with reversibility audits, oracle benchmarks and
contraction sweeps, plus Monte Carlo checks of the supporting likelihood
theory (MGF envelopes, test-error decay, prior-mass conditions).
"""

from .analysis import (
    CellResult,
    ContractionReport,
    contraction_sweep,
    model_concentration,
    oracle_benchmark,
    plot_rate_curve,
    rate_slope,
    report_csv_rows,
    report_to_jsonable,
    risk,
    sweep_cell,
)
from .errors import TsbError
from .experiments import (
    Dataset,
    ExperimentKind,
    ExperimentSpec,
    dataset_from_csv,
    dataset_to_csv,
    intrinsic_metric_sq,
    kl_divergence,
    log_likelihood,
    sample_data,
    toeplitz_cov,
)
from .params import FactorMatrix, MaxAffine, SparsePlusStep, StepFunction, fitted_values
from .priors import (
    App,
    GSpec,
    RateSpec,
    TwoStepPrior,
    best_approx_iso,
    best_approx_rank,
    delta_sq,
    heavy_tail_ok,
    log_model_weights,
    model_weights,
    pava,
    rip_estimate,
    sample_within_model,
    truncation_mass_report,
    within_model_log_density,
)
from .rng import derive_seed, spawn, stream, substream_key
from .samplers import (
    AUDIT_TOL,
    AuditReport,
    Chain,
    GridSpec,
    PosteriorTable,
    SamplerConfig,
    default_config,
    enumerate_posterior,
    export_chain_csv,
    export_chain_jsonl,
    load_chain_jsonl,
    posterior_mean,
    reversibility_audit,
    run_rjmcmc,
    state_key,
)
from .theory_checks import (
    BernsteinReport,
    P2MassResult,
    TestErrorReport,
    check_P1,
    estimate_llr_mgf,
    estimate_P2_mass,
    greedy_covering_upper_bound,
    kind_constants,
    lr_test,
    lr_test_threshold,
    psi,
    random_constrained_pair,
    sandwich_constants,
    test_error_decay,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # experiments
    "ExperimentKind",
    "ExperimentSpec",
    "Dataset",
    "log_likelihood",
    "kl_divergence",
    "intrinsic_metric_sq",
    "sample_data",
    "toeplitz_cov",
    "dataset_to_csv",
    "dataset_from_csv",
    # parameters
    "StepFunction",
    "MaxAffine",
    "FactorMatrix",
    "SparsePlusStep",
    "fitted_values",
    # priors
    "App",
    "RateSpec",
    "GSpec",
    "TwoStepPrior",
    "delta_sq",
    "model_weights",
    "log_model_weights",
    "truncation_mass_report",
    "sample_within_model",
    "within_model_log_density",
    "pava",
    "best_approx_iso",
    "best_approx_rank",
    "rip_estimate",
    "heavy_tail_ok",
    # samplers
    "AUDIT_TOL",
    "GridSpec",
    "SamplerConfig",
    "Chain",
    "PosteriorTable",
    "AuditReport",
    "default_config",
    "run_rjmcmc",
    "posterior_mean",
    "enumerate_posterior",
    "reversibility_audit",
    "state_key",
    "export_chain_csv",
    "export_chain_jsonl",
    "load_chain_jsonl",
    # theory checks
    "psi",
    "BernsteinReport",
    "TestErrorReport",
    "P2MassResult",
    "estimate_llr_mgf",
    "lr_test",
    "lr_test_threshold",
    "test_error_decay",
    "greedy_covering_upper_bound",
    "check_P1",
    "estimate_P2_mass",
    "sandwich_constants",
    "kind_constants",
    "random_constrained_pair",
    # analysis
    "risk",
    "model_concentration",
    "rate_slope",
    "oracle_benchmark",
    "CellResult",
    "ContractionReport",
    "sweep_cell",
    "contraction_sweep",
    "report_to_jsonable",
    "report_csv_rows",
    "plot_rate_curve",
    # rng
    "stream",
    "substream_key",
    "spawn",
    "derive_seed",
    # errors
    "TsbError",
]
