"""Monte Carlo engines: switched paths, the phi-spine, and particle clouds."""

from .particles import (
    ResourceError,
    WTrajectory,
    degeneracy_test,
    sim_particles,
    sim_spine_decomposition,
)
from .rng import RngStream, iter_blocks
from .spine import (
    SpineBatch,
    run_spine_series,
    sample_stationary,
    series_mean_stationary,
    sim_marks,
    sim_spine,
    sim_spine_batch,
    spine_series,
)
from .switched import SwitchedPath, batch_paths, mc_nlfk, sim_switched

__all__ = [
    "RngStream",
    "iter_blocks",
    "SwitchedPath",
    "sim_switched",
    "batch_paths",
    "mc_nlfk",
    "SpineBatch",
    "sample_stationary",
    "sim_spine",
    "sim_spine_batch",
    "sim_marks",
    "spine_series",
    "run_spine_series",
    "series_mean_stationary",
    "ResourceError",
    "WTrajectory",
    "sim_particles",
    "sim_spine_decomposition",
    "degeneracy_test",
]
