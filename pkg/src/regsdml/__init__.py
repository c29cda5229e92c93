"""Double machine learning with regularization selection for partially linear
models with endogenous regressors.

The package estimates the linear coefficient of a partially linear model with
hidden confounding by cross-fitted TSLS on residualized data, and offers a
data-driven regularization scheme that selects between the plain estimator and
a shrunken, lower-variance one. LIML and Fuller comparison estimators, named
structural-equation scenarios, and a Monte Carlo coverage harness round out
the toolkit.
"""

from .data import Dataset, EstimateResult, FoldPartition, ResidualFold, partition_folds
from .errors import EstimationError, GammaSelectionError, SingularSystemError
from .learners import FittedRegressor, RegressorSpec, fit, spline_df
from .crossfit import compute_residuals, project_onto
from .estimators import (
    FoldMoments,
    OrthogonalityDiagnostic,
    confidence_interval,
    dml1_estimate,
    dml2_estimate,
    dml_variance,
    orthogonality_diagnostic,
)
from .regularized import (
    DMatrices,
    GammaGrid,
    RepetitionRecord,
    a_multiplier,
    aggregate_repetitions,
    regdml_estimate,
    regdml_variance,
    regsdml_single_split,
    select_final,
    select_gamma,
)
from .kclass import (
    KappaResult,
    fuller_kappa,
    kappa_result,
    kclass_estimate,
    kclass_gamma,
    liml_kappa,
)
from .pipeline import dml_fit, estimate_methods, regsdml
from .scenarios import (
    MethodSummary,
    ScenarioSpec,
    SimulationReport,
    naive_instrument_diagnostic,
    run_monte_carlo,
    scenario,
)
from .io import emit_report, load_dataset_csv

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EstimateResult",
    "FoldPartition",
    "ResidualFold",
    "partition_folds",
    "EstimationError",
    "GammaSelectionError",
    "SingularSystemError",
    "FittedRegressor",
    "RegressorSpec",
    "fit",
    "spline_df",
    "compute_residuals",
    "project_onto",
    "FoldMoments",
    "OrthogonalityDiagnostic",
    "confidence_interval",
    "dml1_estimate",
    "dml2_estimate",
    "dml_variance",
    "orthogonality_diagnostic",
    "DMatrices",
    "GammaGrid",
    "RepetitionRecord",
    "a_multiplier",
    "aggregate_repetitions",
    "regdml_estimate",
    "regdml_variance",
    "regsdml_single_split",
    "select_final",
    "select_gamma",
    "KappaResult",
    "fuller_kappa",
    "kappa_result",
    "kclass_estimate",
    "kclass_gamma",
    "liml_kappa",
    "dml_fit",
    "estimate_methods",
    "regsdml",
    "MethodSummary",
    "ScenarioSpec",
    "SimulationReport",
    "naive_instrument_diagnostic",
    "run_monte_carlo",
    "scenario",
    "emit_report",
    "load_dataset_csv",
]
