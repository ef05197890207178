"""Simulation and verification toolkit for density-dependent branching processes with genealogies."""

from .offspring import BranchRate, OffspringLaw, check_assumptions
from .forest import Forest
from .simulate import SimConfig, Trajectory, run_forward, run_spine, density_excursion
from .coalescent import PlanarCoalescent, extract, theta_prune, deplanarize, simulate_planar_kingman, rescale
from .stats import random_stream

__version__ = "0.1.0"

__all__ = [
    "BranchRate", "OffspringLaw", "check_assumptions", "Forest", "SimConfig", "Trajectory",
    "run_forward", "run_spine", "density_excursion", "PlanarCoalescent", "extract", "theta_prune",
    "deplanarize", "simulate_planar_kingman", "rescale", "random_stream",
]
