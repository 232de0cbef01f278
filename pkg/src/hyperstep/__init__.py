"""Backstepping control of large-scale and continuum hyperbolic PDE systems."""
__version__ = "0.1.0"

from .control import ControllerSpec, VARIANTS, backstep_transform, inverse_transform, target_coeffs
from .kernels import (ContinuumKernels, NmKernels, compute_sa_bounds, solve_2x2_kernels,
                      solve_continuum_kernels_ps, solve_continuum_kernels_sa, solve_nm_kernels)
from .lift import average_continuum, build_averaged, build_continuum, lift, lift_params, project
from .model import (AveragedParams, ContinuumParams, EnsembleGrid, NmParams, StateField,
                    StructuralError, validate_continuum, validate_nm)
from .sim import SimConfig, SimulationError, Trajectory, simulate_continuum, simulate_nm
from .stability import convergence_study, decay_fit, lyapunov_params, lyapunov_value

__all__ = [
    "__version__",
    "ControllerSpec", "VARIANTS", "backstep_transform", "inverse_transform", "target_coeffs",
    "ContinuumKernels", "NmKernels", "compute_sa_bounds", "solve_2x2_kernels",
    "solve_continuum_kernels_ps", "solve_continuum_kernels_sa", "solve_nm_kernels",
    "average_continuum", "build_averaged", "build_continuum", "lift", "lift_params", "project",
    "AveragedParams", "ContinuumParams", "EnsembleGrid", "NmParams", "StateField",
    "StructuralError", "validate_continuum", "validate_nm",
    "SimConfig", "SimulationError", "Trajectory", "simulate_continuum", "simulate_nm",
    "convergence_study", "decay_fit", "lyapunov_params", "lyapunov_value",
]
