"""Structure-preserving integrators for a cubically coupled oscillator chain.

The model is a complex lattice ODE with nearest-neighbor cubic coupling
whose flow conserves a mass and an energy invariant. This package
provides the model's right-hand side and invariants, four symmetric
implicit one-step schemes (each conserving a chosen invariant exactly up
to solver tolerance), classical RK4, an invariant-projected RK4, a Newton
solver with an analytic block-tridiagonal Jacobian, and harnesses for
convergence, solver-cost, and long-horizon ensemble experiments.
"""

__version__ = "0.1.0"

from .ensemble import (DiagnosticsRecord, EnsembleFailureError, EnsembleSeries,
                       EnsembleSpec, generate_ic, run_ensemble, run_trajectory)
from .experiments import (DT_LADDER, ConfigurationError, ConvergenceReport,
                          CostReport, StepFailureError, SurrogateError,
                          convergence_study, cost_study, long_time_bias_study,
                          max_pointwise_error, shock_ic, trajectory_states)
from .io import (read_series, write_convergence_reports, write_cost_reports,
                 write_ensemble_series, write_series)
from .model import (Closure, InvalidStateError, StateVector, TimeGrid, energy,
                    ghost_padded, hamiltonian_gradient, hs_norm, hs_norm_sq,
                    mass, rhs)
from .newton import (BlockTridiagonalMatrix, PROJECTION_SOLVER_DEFAULTS,
                     SingularMatrixError, SolverConfig, SolverStats,
                     newton_solve, solve_block_tridiagonal)
from .schemes import (CONSERVING_SCHEMES, IMPLICIT_SCHEMES, NonlinearAverages,
                      SchemeKind, StepResult, UnsupportedSchemeError, jacobian,
                      nonlinear_averages, residual, reverse_step_implicit,
                      step_implicit, step_projection, step_rk4)

__all__ = [
    "__version__",
    "Closure", "InvalidStateError", "StateVector", "TimeGrid",
    "ghost_padded", "rhs", "mass", "energy", "hamiltonian_gradient",
    "hs_norm", "hs_norm_sq",
    "SolverConfig", "SolverStats", "SingularMatrixError",
    "PROJECTION_SOLVER_DEFAULTS", "BlockTridiagonalMatrix",
    "newton_solve", "solve_block_tridiagonal",
    "SchemeKind", "StepResult", "NonlinearAverages", "UnsupportedSchemeError",
    "IMPLICIT_SCHEMES", "CONSERVING_SCHEMES",
    "nonlinear_averages", "residual", "jacobian",
    "step_implicit", "reverse_step_implicit", "step_rk4", "step_projection",
    "DiagnosticsRecord", "EnsembleSpec", "EnsembleSeries",
    "EnsembleFailureError", "generate_ic", "run_trajectory", "run_ensemble",
    "DT_LADDER", "ConvergenceReport", "CostReport", "ConfigurationError",
    "SurrogateError", "StepFailureError", "shock_ic", "trajectory_states",
    "max_pointwise_error", "convergence_study", "cost_study",
    "long_time_bias_study",
    "write_series", "read_series", "write_ensemble_series",
    "write_convergence_reports", "write_cost_reports",
]
