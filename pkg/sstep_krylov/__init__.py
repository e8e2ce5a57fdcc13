"""
s-step Krylov solvers

Orthomin(k), GCR and restarted GMRES(m) next to their s-step variants,
which advance s directions per iteration from monomial Krylov blocks and
small Gram solves, plus ILU(0) preconditioning, convection-diffusion test
problems and vector-operation accounting.
"""

__version__ = "0.1.0"

from sstep_krylov.accounting import OpCounter, audit, predicted_gmres, predicted_omin
from sstep_krylov.errors import (
    BasisCollapseError,
    BreakdownError,
    GramBreakdownError,
    IluBreakdownError,
    KrylovError,
    OrthogonalityLossError,
    RankDeficiencyError,
)
from sstep_krylov.precond import Ilu0Factors, ilu0_apply, ilu0_factor
from sstep_krylov.problem_gen import ProblemSpec, discretize
from sstep_krylov.solvers_sstep import (
    SStepArnoldi,
    SStepConfig,
    SStepMethod,
    sarnoldi,
    sgmres_solve,
    smr_solve,
    smr_step,
    somin_solve,
)
from sstep_krylov.solvers_standard import (
    Method,
    SolveReport,
    SolverConfig,
    arnoldi,
    gmres_solve,
    mr_solve,
    omin_solve,
)
from sstep_krylov.sparse_core import SparseMatrix, spmv
