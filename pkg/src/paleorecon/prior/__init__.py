from .fused import fused_lasso_1d, fused_lasso_tridiag, tridiag_objective
from .model import (
    M_BOUND,
    R2_FLOOR,
    CvReport,
    EnsembleMatrix,
    FitTrace,
    PenaltyConfig,
    PriorModel,
    cross_validate,
    default_grid,
    fit_prior,
    neg_log_lik,
    penalized_objective,
    penalty_value,
    unpenalized_ml,
)

__all__ = [
    "M_BOUND", "R2_FLOOR", "CvReport", "EnsembleMatrix", "FitTrace", "PenaltyConfig", "PriorModel",
    "cross_validate", "default_grid", "fit_prior", "fused_lasso_1d", "fused_lasso_tridiag",
    "neg_log_lik", "penalized_objective", "penalty_value", "tridiag_objective", "unpenalized_ml",
]
