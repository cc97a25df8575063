"""Output-feedback stochastic predictive control with bounded inputs.

Kalman filtering, saturated-innovation affine policies, a per-instant convex
QP solved by an in-house ADMM solver, Monte-Carlo moment estimation, and a
closed-loop simulation harness.
"""

from .decomp import Decomposition, decompose, reachability_index, zeta_bound
from .errors import (
    AssumptionError,
    CacheError,
    ConfigurationError,
    DecompositionError,
    DivergenceError,
    InternalContradictionError,
    NumericalError,
    OfspcError,
    UnreachableOrthogonalPartError,
)
from .kalman import ErrorStack, FilterState, SteadyGains, error_stack, init_filter, step, steady_state
from .model import StackedMatrices, SystemSpec, build_stacked, reachability_matrix, validate
from .moments import MomentSet, compute_moments, estimate_moments, load_moments, save_moments
from .ocp import (
    OcpContext,
    OcpSolution,
    VarMap,
    build_constraints,
    build_objective,
    fallback_point,
    make_context,
    prior_feasibility_threshold,
    solve_ocp,
)
from .policy import PolicyParams, PsiSpec, eval_policy, hard_bound_margin, psi_apply, sat_r_zeta
from .qpsolver import QpProblem, QpSettings, QpSolution

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
