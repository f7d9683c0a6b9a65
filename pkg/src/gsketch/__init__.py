"""Randomized SVD with multivariate Gaussian sketches, for matrices and integral operators."""

from .covariance import (
    CovarianceForm,
    CovarianceSpec,
    EigenSequence,
    SequenceKind,
    covariance_numerical_rank,
    discretize_covariance,
    jacobi_basis,
    jacobi_poly_weighted,
    kernel_eval,
)
from .estimators import GeneralizedRandomizedSVD, HSKernelLearner
from .exceptions import ConfigError, ContinuityWarning, GSketchError, NumericalError
from .hsop import (
    DiscretizedKernel,
    LearnedKernel,
    apply_adjoint,
    apply_operator,
    bessel_j0,
    build_kernel,
    hs_randomized_svd,
    l2_error,
    read_tabulated,
    weighted_qr,
    write_tabulated,
)
from .quadrature import GridFamily, QuadratureGrid, make_grid
from .sampling import FactoredCovariance, RandomSource, draw_mvn_matrix, factor_covariance, sample_gp_function
from .sketch import (
    BoundMode,
    LowRankFactors,
    QualityFactors,
    SketchConfig,
    SketchResult,
    beta_k,
    bound_rhs,
    failure_probability,
    gamma_k,
    generalized_rsvd,
    project_error,
    quality_factors,
    range_finder,
    svd_tail,
)

__version__ = "0.1.0"

__all__ = [
    "BoundMode",
    "ConfigError",
    "ContinuityWarning",
    "CovarianceForm",
    "CovarianceSpec",
    "DiscretizedKernel",
    "EigenSequence",
    "FactoredCovariance",
    "GSketchError",
    "GeneralizedRandomizedSVD",
    "GridFamily",
    "HSKernelLearner",
    "LearnedKernel",
    "LowRankFactors",
    "NumericalError",
    "QualityFactors",
    "QuadratureGrid",
    "RandomSource",
    "SequenceKind",
    "SketchConfig",
    "SketchResult",
    "apply_adjoint",
    "apply_operator",
    "bessel_j0",
    "beta_k",
    "bound_rhs",
    "build_kernel",
    "covariance_numerical_rank",
    "discretize_covariance",
    "draw_mvn_matrix",
    "factor_covariance",
    "failure_probability",
    "gamma_k",
    "generalized_rsvd",
    "hs_randomized_svd",
    "jacobi_basis",
    "jacobi_poly_weighted",
    "kernel_eval",
    "l2_error",
    "make_grid",
    "project_error",
    "quality_factors",
    "range_finder",
    "read_tabulated",
    "sample_gp_function",
    "svd_tail",
    "weighted_qr",
    "write_tabulated",
]
