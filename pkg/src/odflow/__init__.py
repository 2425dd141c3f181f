"""Origin-destination matrix estimation from margin counts and survey priors.

The package estimates the full station-to-station passenger matrix when only
per-station departure/arrival totals are observed, using the eigenvectors of
a survey-derived OD matrix as transferable structure and fitting the
eigenvalues from the margins.
"""

from .core import (
    CovariateDesign,
    ODMatrix,
    ObservationSet,
    SpectralForm,
    read_matrix_csv,
    reconstruct,
    residual_margins,
    row_col_margins,
    spectral_decompose,
    symmetrize,
    write_matrix_csv,
)
from .errors import (
    ConfigError,
    DataInconsistencyError,
    EstimationError,
    NumericError,
    SchemaError,
)
from .estim import (
    EstimatorReport,
    NBFit,
    estimate_adhoc,
    estimate_lambda_gaussian,
    estimate_lambda_mle,
    estimate_lambda_poisson,
    estimate_lambda_regression,
    fit_negbin,
    project_constraints,
    zone_travel_ratio,
)
from .kernels import BACKEND
from .sim import (
    NBParams,
    SimConfig,
    bias_survey_absolute,
    bias_survey_proportional,
    sample_counts,
    sample_regression_counts,
    subsample_survey,
)
from .stats import (
    ReplicationResult,
    consistency_profile,
    cvm_normality,
    mse,
    normality_experiment,
    regression_experiment,
    replicate_experiment,
    robustness_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "ODMatrix", "SpectralForm", "ObservationSet", "CovariateDesign",
    "symmetrize", "spectral_decompose", "reconstruct", "row_col_margins",
    "residual_margins", "write_matrix_csv", "read_matrix_csv",
    "NBParams", "SimConfig", "sample_counts", "subsample_survey",
    "bias_survey_absolute", "bias_survey_proportional", "sample_regression_counts",
    "EstimatorReport", "NBFit", "project_constraints", "fit_negbin",
    "estimate_lambda_gaussian", "estimate_lambda_poisson", "estimate_lambda_mle",
    "estimate_lambda_regression", "estimate_adhoc", "zone_travel_ratio",
    "ReplicationResult", "mse", "replicate_experiment", "consistency_profile",
    "robustness_sweep", "cvm_normality", "normality_experiment",
    "regression_experiment",
    "SchemaError", "ConfigError", "NumericError", "EstimationError",
    "DataInconsistencyError",
    "BACKEND", "__version__",
]
