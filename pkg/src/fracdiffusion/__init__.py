"""Implicit finite-difference solvers for time-space fractional diffusion.

The time derivative is a Caputo derivative of order ``gamma`` in (0, 1) with a
weighting function ``lambda(t)`` in its kernel; the space derivative is a
two-sided Riemann-Liouville operator of order ``alpha`` in (1, 2]. Time is
discretized by a generalized L1 formula (or a sum-of-exponentials fast
variant), space by weighted shifted Grunwald differences, and each level is a
Toeplitz-like system solved by preconditioned BiCGSTAB.
"""

from .errors import (
    CertificationError,
    ConfigError,
    FracDiffusionError,
    LinearSolveError,
    QuadratureError,
    SingularPreconditionerError,
)
from .kernels import (
    L1Coefficients,
    SoeApproximation,
    WeightingFunction,
    WsgdWeights,
    alpha0,
    l1_coefficients,
    local_weight,
    soe_build,
    w2_value,
    wsgd_weights,
)
from .krylov import SolveConfig, SolveResult, bicgstab
from .problems import (
    ErrorReport,
    ManufacturedProblem,
    compute_errors,
    convergence_rate,
    example1,
    example2,
    exampleA1,
    run_problem,
)
from .solver import (
    Discretization,
    HistoryState,
    ProblemSpec,
    RunReport,
    SolutionField,
    discretize,
    solve,
    step_direct,
    step_fast,
)
from .toeplitz import (
    BandedFactor,
    GsfInverse,
    SkewCirculantFactor,
    SystemOperator,
    ToeplitzMatrix,
    build_banded_preconditioner,
    build_gsf_inverse,
    build_skew_circulant_preconditioner,
    is_diagonally_dominant,
    toeplitz_matvec,
)

__version__ = "0.1.0"
