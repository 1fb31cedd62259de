"""exhom: resonance-error reduction for numerical homogenization in 2-D.

Approximates homogenized coefficient tensors and correctors of heterogeneous
elliptic operators through zero-order regularization, Richardson
extrapolation in the regularization parameter, and filtered spatial
averaging, and couples the resulting local tensors to a coarse multiscale
solver.  See README.md for an overview and the demos/ directory for
narrative walkthroughs of each capability.
"""

from .averaging import (
    Filter,
    HomTensor,
    build_filter,
    filtered_average,
    hom_tensor_prime,
    hom_tensor_projected,
    solve_corrector_bundle,
)
from .coeffs import CoefficientField, catalog, constant, ellipticity_scan, laminate
from .corrector import (
    CorrectorSolution,
    corrector_error,
    corrector_ladder,
    extrapolate,
    psi_identity_check,
    residual_identity_check,
    richardson_combine,
    solve_regularized,
)
from .grid import DofVector, SolverError, SparseSystem, StructuredGrid, assemble, gradient_field, solve
from .hmm import CoarseMesh, coarse_solve, hmm_solve, numerical_corrector, scaled_field
from .lattice import (
    PUBLISHED_CELL_VALUE,
    LatticeField,
    default_pattern,
    exact_cell_hom,
    lattice_corrector,
    lattice_hom,
    weave_pattern,
)
from .reference import CellProblemResult, laminate_oracle, periodic_cell
from .study import SlopeFit, StudyRecord, fit_slope, write_csv

__version__ = "0.1.0"
