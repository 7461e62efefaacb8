"""gramsolve: maintained solvers for slowly changing weighted Gram systems.

The package keeps an efficient solver for A^T D A alive while the diagonal D
drifts across rounds (leverage-score sparsifiers, low-rank inverse updates,
subspace-embedding compression), and applies that machinery to path-following
linear programming, l1/linf regression, polytope rounding and flow problems.
"""

from .errors import (
    BudgetExceeded,
    ChurnBudgetExceeded,
    DimensionMismatch,
    Disconnected,
    DriftViolation,
    GramSolveError,
    Infeasible,
    IterationLimit,
    NoInterior,
    NonConvergence,
    NonPositiveWeights,
    NotLinear,
    ParseError,
    RankDeficient,
    SingularCapacitance,
    SolverMismatch,
    StabilityViolation,
    StaleHandle,
    Unbounded,
)
from .matrix_core import (
    ConstraintMatrix,
    PDMatrix,
    WeightVector,
    exact_factorize,
    gram_product,
    read_matrix,
    read_weights,
    spectral_close,
    write_matrix,
    write_weights,
)
from .solver_core import (
    ApproxInverse,
    SolverHandle,
    certify_solver,
    iteration_count,
    richardson_solver,
)

__version__ = "0.1.0"
