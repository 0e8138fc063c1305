"""Finite-element diffusion systems, implicit Runge-Kutta stage operators and their conditioning."""

__version__ = "0.1.0"

from .mesh import SimplicialMesh, generate_graded, generate_mapped_anisotropic, generate_perturbed, generate_uniform, load_mesh
from .diffusion import DiffusionField, builtin_field, element_averages
from .assembly import FEMatrices, assemble
from .metric import metric_element_data, reference_constants
from .spectral import KronOperator, kappa, kappa_tilde, sym_extremal_eigs
from .rk import ButcherTableau, builtin_tableau, gamma_stats, real_jordan, step_simultaneous, step_successive
from .solver import SolverConfig, cg, direct_solve, gmres
from .bounds import analyze, euler_bounds, irk_bounds
from .experiments import RunConfig, fit_slope, run_sweep, scaling_comparison

__all__ = [
    "SimplicialMesh", "generate_uniform", "generate_graded", "generate_perturbed", "generate_mapped_anisotropic",
    "load_mesh", "DiffusionField", "builtin_field", "element_averages", "FEMatrices", "assemble",
    "metric_element_data", "reference_constants", "KronOperator", "kappa", "kappa_tilde", "sym_extremal_eigs",
    "ButcherTableau", "builtin_tableau", "gamma_stats", "real_jordan", "step_simultaneous", "step_successive",
    "SolverConfig", "cg", "direct_solve", "gmres", "analyze", "euler_bounds", "irk_bounds",
    "RunConfig", "fit_slope", "run_sweep", "scaling_comparison",
]
