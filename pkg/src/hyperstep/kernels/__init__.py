"""Kernel solvers, a priori bounds, residual diagnostics and characteristic geometry."""
from .bounds import SaBounds, comparison_function, compute_sa_bounds, minimal_gamma
from .diagnostics import BoundaryResiduals, boundary_residuals, interior_residual, k_jump, kernel_gap
from .geometry import (
    SEG_A, SEG_B, SEG_C, SEG_DIAG, CharacteristicPath, GeometryError,
    phi_table, rho, segment_labels, trace_characteristics,
)
from .powerseries import CollocationWarning, solve_continuum_kernels_ps, total_degree_indices
from .sa import (
    ContinuumKernels, Kernel2x2, KernelConvergenceError, NmKernels, SaHistory,
    resolve_workers, solve_2x2_kernels, solve_continuum_kernels_sa, solve_nm_kernels,
)
