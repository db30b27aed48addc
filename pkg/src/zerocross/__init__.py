"""Zero crossings of signed measures under killed diffusions.

Signed measures and their crossing counts, annihilating particle systems,
Monte Carlo replicas, a finite-difference forward solver and a scenario CLI.
"""

from .dynamics import ProcessSpec, apply_kappa_shift, exact_jump_distribution, transform_backward_to_forward
from .expr import parse_expr
from .fokker_planck import FDSolverConfig, crossing_series, solve_forward
from .measures import (
    GridFunction,
    ParticleMeasure,
    SignedAtomMeasure,
    block_signs,
    bump_alternation,
    canonicalize,
    crossings,
    crossings_bruteforce,
    grid_crossings,
    is_subsequence,
    sigma,
    sign_sequence,
)
from .montecarlo import InitialLaw, run_ensemble, run_replica
from .particles import init_from_particle_measure, measure_Y, measure_Z, step_system
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "FDSolverConfig",
    "GridFunction",
    "InitialLaw",
    "ParticleMeasure",
    "ProcessSpec",
    "Scenario",
    "SignedAtomMeasure",
    "apply_kappa_shift",
    "block_signs",
    "bump_alternation",
    "canonicalize",
    "crossing_series",
    "crossings",
    "crossings_bruteforce",
    "exact_jump_distribution",
    "grid_crossings",
    "init_from_particle_measure",
    "is_subsequence",
    "load_scenario",
    "measure_Y",
    "measure_Z",
    "parse_expr",
    "run_ensemble",
    "run_replica",
    "sigma",
    "sign_sequence",
    "solve_forward",
    "step_system",
    "transform_backward_to_forward",
]
