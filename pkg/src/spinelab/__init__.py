"""spinelab: multitype superdiffusions with non-local branching, on a grid.

The package builds the mean semigroup of a K-type superdiffusion on a
bounded interval, extracts its principal eigenpair, runs the transformed
spine dynamics, and verifies the martingale decomposition and the L log L
dichotomy both deterministically and by Monte Carlo.
"""

from .kernels import EtaTable, FiniteMixture, ParetoLog, PointMass, kernel_from_dict
from .model import CoefficientFields, Interval, ModelSpec, ValidationError
from .scenarios import (BUILTIN_SCENARIOS, load_scenario, parse_scenario,
                        scenario_fingerprint)
from .discretize import Grid, Operators, build_grid, build_operators
from .spectral import (IUReport, PhiTransform, SpectralData, SymmetricSemigroup,
                       check_assumption1, check_iu, heat_kernel,
                       phi_transform, principal_eigenpair)
from .evolve import (EvolutionTrajectory, FKWeightSpec, StabilityError,
                     constant_weights, laplace_functional, nlfk_solve,
                     solve_cumulant, solve_linearized, solve_mean,
                     spine_laplace, stable_dt, theorem1_check,
                     theorem1_weights, tilted_laplace)
from .simulate import (ResourceError, RngStream, SpineBatch, SwitchedPath,
                       WTrajectory, batch_paths, degeneracy_test, mc_nlfk,
                       run_spine_series, sample_stationary,
                       series_mean_stationary, sim_marks, sim_particles,
                       sim_spine, sim_spine_batch, sim_spine_decomposition,
                       sim_switched, spine_series)
from .criterion import (CriterionReport, ExperimentReport,
                        dichotomy_experiment, llogl_integral)
from .reports import VERSION as __version__

__all__ = [
    "EtaTable", "FiniteMixture", "ParetoLog", "PointMass", "kernel_from_dict",
    "CoefficientFields", "Interval", "ModelSpec", "ValidationError",
    "BUILTIN_SCENARIOS", "load_scenario", "parse_scenario", "scenario_fingerprint",
    "Grid", "Operators", "build_grid", "build_operators",
    "IUReport", "PhiTransform", "SpectralData", "SymmetricSemigroup",
    "check_assumption1", "check_iu", "heat_kernel", "phi_transform",
    "principal_eigenpair",
    "EvolutionTrajectory", "FKWeightSpec", "StabilityError", "constant_weights",
    "laplace_functional", "nlfk_solve", "solve_cumulant", "solve_linearized",
    "solve_mean", "spine_laplace", "stable_dt", "theorem1_check",
    "theorem1_weights", "tilted_laplace",
    "ResourceError", "RngStream", "SpineBatch", "SwitchedPath", "WTrajectory",
    "batch_paths", "degeneracy_test", "mc_nlfk", "run_spine_series",
    "sample_stationary", "series_mean_stationary", "sim_marks", "sim_particles",
    "sim_spine", "sim_spine_batch", "sim_spine_decomposition", "sim_switched",
    "spine_series",
    "CriterionReport", "ExperimentReport", "dichotomy_experiment", "llogl_integral",
    "__version__",
]
