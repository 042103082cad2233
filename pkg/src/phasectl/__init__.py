"""Relaxed Cahn-Hilliard / nutrient tumor-growth model with distributed control.

Finite-difference solvers for the relaxed state system and its ``beta = 0``
limit, the backward adjoint systems, a box-constrained projected-gradient
optimizer, and sweeps that follow states, adjoints and optimal controls as
``beta`` goes to zero.
"""

from .adjoint import AdjointTrajectory, solve_adjoint, solve_adjoint_beta, solve_adjoint_limit
from .asymptotics import (
    DEFAULT_BETAS,
    SweepReport,
    sweep_adjoint,
    sweep_optimal_controls,
    sweep_state,
)
from .control import (
    ControlProblem,
    OptimizeReport,
    ReducedProblem,
    check_variational_inequality,
    evaluate_adapted_cost,
    evaluate_cost,
    fd_gradient_check,
    optimize_projected_gradient,
    project_box,
    reduced_gradient,
)
from .errors import PhasectlError, SolverError, ValidationError
from .grid import Grid, build_grid
from .potentials import Potential, RegularizedPotential, regular_potential
from .state import (
    InitialData,
    ModelParams,
    StateTrajectory,
    compatible_initial_data,
    reconstruct_phi0,
    solve_state,
    solve_state_beta,
    solve_state_limit,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointTrajectory", "ControlProblem", "DEFAULT_BETAS", "Grid", "InitialData",
    "ModelParams", "OptimizeReport", "PhasectlError", "Potential", "ReducedProblem",
    "RegularizedPotential", "SolverError", "StateTrajectory", "SweepReport",
    "ValidationError", "build_grid", "check_variational_inequality",
    "compatible_initial_data", "evaluate_adapted_cost", "evaluate_cost",
    "fd_gradient_check", "optimize_projected_gradient", "project_box",
    "reconstruct_phi0", "reduced_gradient", "regular_potential", "solve_adjoint",
    "solve_adjoint_beta", "solve_adjoint_limit", "solve_state", "solve_state_beta",
    "solve_state_limit", "sweep_adjoint", "sweep_optimal_controls", "sweep_state",
]
