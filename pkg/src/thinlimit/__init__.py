"""thinlimit: thin-body elastic energies and their dimensionally-reduced
limits, with desk-scale convergence experiments."""

from .energy3d import BulkState, eval_Eh, grad_Eh
from .geometry import (BulkMode, ScenarioSpec, SurfaceMesh, TubularGrid,
                       build_surface_mesh, build_tubular_grid, christoffel,
                       eval_bulk_metric, eval_metric)
from .harness import GammaRow, gamma_sweep, rate_fit, rigidity_probe, run_check
from .optimize import OptimizeOptions, minimize_bulk, minimize_reduced
from .recovery import build_recovery, recovery_differential
from .reduced import ReducedState, assemble_q, covariant_derivative_qperp, eval_Elim, grad_Elim, kappa
from .report import EnergyReport
from .rodsolver import RodScenario, integrate_frame
from .rotations import FramePair, dist_SO, nearest_rotation, sym_linearized
from .scenarios import (cylinder_shell, euclid_plate, hyperbolic_plate,
                        load_scenario, rod, sphere_cap_shell)

__version__ = "0.1.0"

__all__ = [
    "BulkMode", "BulkState", "EnergyReport", "FramePair", "GammaRow",
    "OptimizeOptions", "ReducedState", "RodScenario", "ScenarioSpec",
    "SurfaceMesh", "TubularGrid", "assemble_q", "build_recovery",
    "build_surface_mesh", "build_tubular_grid", "christoffel",
    "covariant_derivative_qperp", "cylinder_shell", "dist_SO", "euclid_plate",
    "eval_Eh", "eval_Elim", "eval_bulk_metric", "eval_metric", "gamma_sweep",
    "grad_Eh", "grad_Elim", "hyperbolic_plate", "integrate_frame", "kappa",
    "load_scenario", "minimize_bulk", "minimize_reduced", "nearest_rotation",
    "rate_fit", "recovery_differential", "rigidity_probe", "rod", "run_check",
    "sphere_cap_shell", "sym_linearized",
]
