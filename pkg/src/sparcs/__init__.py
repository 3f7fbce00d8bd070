"""Two-stage screening and prediction for budget-limited high-dimensional regression."""
from ._version import __version__
from .errors import (
    ConfigError,
    DataError,
    NumericalError,
    SparcsError,
    UsageError,
)
from .linalg import (
    DataMatrix,
    MomentSummary,
    UScoreSet,
    compute_moments,
    compute_uscores,
    cross_correlation,
    min_norm_ols,
    read_csv,
    response_uscores,
)
from .phase import critical_threshold, p0, pvalue, reg_incomplete_beta, xi
from .screening import Method, ScreeningScores, SupportSet, pcs_scores, screen, sis_scores
from .two_stage import BudgetPlan, TwoStageModel, allocate_budget, fit, predict, rmse

__all__ = [
    "__version__",
    "BudgetPlan",
    "ConfigError",
    "DataError",
    "DataMatrix",
    "Method",
    "MomentSummary",
    "NumericalError",
    "ScreeningScores",
    "SparcsError",
    "SupportSet",
    "TwoStageModel",
    "UScoreSet",
    "UsageError",
    "allocate_budget",
    "compute_moments",
    "compute_uscores",
    "critical_threshold",
    "cross_correlation",
    "fit",
    "min_norm_ols",
    "p0",
    "pcs_scores",
    "predict",
    "pvalue",
    "read_csv",
    "reg_incomplete_beta",
    "response_uscores",
    "rmse",
    "screen",
    "sis_scores",
    "xi",
]
