"""Numerical Monge-Ampere equation on almost complex domains in R^{2n}.

Solves the Dirichlet problem det A(u) = f for the bracket-corrected complex
Hessian A of an almost complex structure (n = 1, 2), verifies comparison
principles and a priori bounds on computed solutions, generates
pseudoholomorphic disks as independent oracles, and computes maximal
plurisubharmonic functions by a vanishing-right-hand-side scheme.
"""

__version__ = "0.1.0"

from .barriers import BarrierPair, build_barriers, m_rho
from .disks import Disk, disk_laplacian_probe, make_disk, psh_check_disks
from .errors import (
    AcmaError, ConfigError, DegenerateFrame, DiskEscapesDomain, EmptyDomain,
    GridMismatch, InvalidStructure, JetTooLong, LostPositivity, NewtonStalled,
    NoContraction, NotPositiveDefinite, NotStrictlyPsh, ParseError,
    ScheduleTooShort, StencilOutOfDomain, TransversalityFailure,
)
from .geometry import (
    AlmostComplexStructure, Frame, HermitianMetric, bracket_01,
    induced_metric, integrability_defect, sheared_structure, split_frame,
    standard_structure, structure_from_table, validate_structure,
)
from .grid import GridDomain, ScalarField, ball_rho, ellipsoid_rho, grid_build
from .maximal import (
    MaximalRun, fj_harmonic_check, holder_experiment, locality_check,
    make_ball_cover, maximality_probe, solve_maximal,
)
from .operator import (
    OperatorKernel, a_matrix, frame_coefficients, linearized_apply,
    ma_residual, psh_classify, quadratic_form,
)
from .solver import (
    MAProblem, SolverConfig, Solution, comparison_check, estimate_report,
    solve_dirichlet,
)
