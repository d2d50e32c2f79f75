"""Generalized Wendland and Matérn covariance models for Gaussian random fields.

Special functions, correlation kernels, spectral densities, covariance
matrices with sparse Cholesky factorization, maximum-likelihood fitting,
simulation studies and kriging.
"""

__version__ = "0.1.0"

from .covmat import (
    CholeskyFactor,
    PointSet,
    SymmetricMatrix,
    assemble,
    build_pointset,
    cholesky,
    cross_covariance,
    neighbors_within,
    read_points_csv,
    sparsity_stats,
    write_points_csv,
)
from .errors import (
    ConvergenceError,
    DomainError,
    DuplicateLocationError,
    FitError,
    GWMaternError,
    NotPositiveDefiniteError,
    PrecisionLossError,
)
from .inference import (
    FitResult,
    ParamVector,
    equivalence_check,
    fisher_information,
    fit_ml,
    log_likelihood,
    microergodic,
)
from .kernels import (
    CorrelationModel,
    GenWendlandParams,
    MaternParams,
    PhiParams,
    delta_support,
    gw_hypergeometric,
    gw_integral,
    matern,
    min_shape,
    phi,
    practical_range,
)
from .montecarlo import MCReport, SimConfig, beta_for_support, run_study, simulate_grf
from .predict import KrigingResult, PredictionScores, krige, loo_cv, resample_scores, score_holdout
from .spectral import convergence_table, gw_spectral, lemma1_check, matern_spectral
