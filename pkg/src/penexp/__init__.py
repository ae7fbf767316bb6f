"""Penalized regression estimators, their first-order expansions, and a
seeded simulation harness for checking error rates, risk identities,
confidence-interval coverage, cone membership and sparsity."""

from .cones import (
    GroupCone,
    LassoCone,
    SupportCone,
    complexity_bound,
    complexity_estimate,
    cone_member,
    group_cone,
    group_penalty_level,
    lasso_cone,
    lasso_penalty_level,
    minimax_rate,
    restricted_eigenvalue_bound,
    sparse_cone_from_counts,
    support_cone,
)
from .diagnostics import (
    InferenceReport,
    RiskIdentityReport,
    curvature_fluctuations,
    debiased_estimate,
    empirical_curvature_ratio,
    prox_risk_mc,
    prox_risk_quadrature,
    risk_identity_check,
    sparsity_constant,
    sparsity_count,
    taylor_remainder_gap,
)
from .harness import (
    ExperimentConfig,
    GridPoint,
    parse_config,
    rate_fit,
    run_experiment,
)
from .losses import (
    LOGISTIC,
    SQUARED,
    CurvatureMatrix,
    Loss,
    curvature_lower_bound,
    curvature_matrix,
    curvature_matrix_mc,
    get_loss,
    load_curvature,
    norm_ratio_bound,
    save_curvature,
    stability_ratio_check,
)
from .model import (
    CovarianceModel,
    Dataset,
    GroundTruth,
    GroupStructure,
    flat_signal,
    generate_design,
    generate_linear,
    generate_logistic,
    load_dataset,
    noise_scale,
    save_dataset,
    stream_rng,
)
from .penalties import (
    GroupPenalty,
    L1BallConstraint,
    L1Penalty,
    penalty_value,
    project_l1_ball,
    prox,
    soft_threshold,
    subdifferential_residual,
)
from .solver import (
    SolverConfig,
    SolverResult,
    expansion_center,
    fit_expansion,
    fit_penalized,
    smooth_gradient,
)

__all__ = [
    "CovarianceModel", "Dataset", "GroundTruth", "GroupStructure",
    "flat_signal", "generate_design", "generate_linear", "generate_logistic",
    "load_dataset", "noise_scale", "save_dataset", "stream_rng",
    "LOGISTIC", "SQUARED", "CurvatureMatrix", "Loss",
    "curvature_lower_bound", "curvature_matrix", "curvature_matrix_mc",
    "get_loss", "load_curvature", "norm_ratio_bound", "save_curvature",
    "stability_ratio_check",
    "GroupPenalty", "L1BallConstraint", "L1Penalty", "penalty_value",
    "project_l1_ball", "prox", "soft_threshold", "subdifferential_residual",
    "SolverConfig", "SolverResult", "expansion_center", "fit_expansion",
    "fit_penalized", "smooth_gradient",
    "GroupCone", "LassoCone", "SupportCone", "complexity_bound",
    "complexity_estimate", "cone_member", "group_cone",
    "group_penalty_level", "lasso_cone", "lasso_penalty_level",
    "minimax_rate", "restricted_eigenvalue_bound", "sparse_cone_from_counts",
    "support_cone",
    "InferenceReport", "RiskIdentityReport", "curvature_fluctuations",
    "debiased_estimate", "empirical_curvature_ratio", "prox_risk_mc",
    "prox_risk_quadrature", "risk_identity_check", "sparsity_constant",
    "sparsity_count", "taylor_remainder_gap",
    "ExperimentConfig", "GridPoint", "parse_config", "rate_fit",
    "run_experiment",
]
