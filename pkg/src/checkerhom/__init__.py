"""Periodic elliptic solver with random checkerboard coefficients.

Kronecker-sum stiffness assembly on periodic tensor grids, an FFT-based
pseudo-inverse Laplacian preconditioner with a low-rank canonical variant,
mean-projected conjugate gradients, and a Monte-Carlo driver for homogenized
coefficient matrices and their deviation-versus-L statistics.
"""

from .errors import (
    ConfigurationError,
    DenseSizeError,
    InsufficientData,
    QuadratureFailure,
    SolverBreakdown,
    SolverDidNotConverge,
)
from .homogenize import (
    DeviationFit,
    EnsembleStats,
    HomogenizedMatrix,
    corrector_rhs,
    deviation_slope,
    ensemble_run,
    homogenized_matrix,
)
from .lattice import (
    CoefficientGrid,
    ContrastModel,
    LatticeConfig,
    Realization,
    coefficient_grid,
    covered_volume_fraction,
    derive_seed,
    sample_realization,
)
from .lowrank import (
    CanonicalTensor,
    ExpSumQuadrature,
    apply_lkr_preconditioner,
    canonical_reciprocal,
    dc_correction,
    exp_sum_quadrature,
    max_rel_error,
)
from .operators import (
    KroneckerOperator,
    StiffnessOperator,
    assemble_periodic_laplacian,
    assemble_stiffness,
    assemble_stochastic_part,
    kron_matvec,
    kronecker_rank,
    laplacian_1d_neumann,
    laplacian_1d_periodic,
    multi_index,
    inverse_multi_index,
    to_dense,
    to_sparse,
)
from .solver import (
    PcgReport,
    SolveOptions,
    make_preconditioner,
    pcg_solve,
    project_mean_zero,
    residual,
)
from .spectral import (
    EigenSpectrum,
    EigensumTensor,
    PseudoInverseDiag,
    apply_fourier_preconditioner,
    eigensum_tensor,
    fourier_eigenvalues,
    pseudoinverse_diag,
)

__version__ = "0.1.0"
