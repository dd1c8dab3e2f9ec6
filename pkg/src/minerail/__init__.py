"""Rail dispatch planning on a time-space network.

Pipeline: ``physnet`` (input model) -> ``tsnet`` (expansion) -> ``mip``
(binary program and pre-processing) -> ``solver`` (branch and bound) ->
``dispatch`` (stitching and the rolling-horizon loop).
"""

from .dispatch import CycleConfig, Schedule, WorldState, advance, plan_cycle, simulate, solve_offline, stitch
from .mip import MipModel, PenaltyConfig, build_model, preprocess, prune_banned, prune_unreachable
from .physnet import PhysicalNetwork, TimeGrid, load_fleet, load_network, validate_fleet
from .solver import Solution, SolverConfig, WarmStart, brute_force, solve
from .tsnet import TimeSpaceNetwork, build_tsnet, expand

__all__ = [
    "CycleConfig", "Schedule", "WorldState", "advance", "plan_cycle", "simulate", "solve_offline", "stitch",
    "MipModel", "PenaltyConfig", "build_model", "preprocess", "prune_banned", "prune_unreachable",
    "PhysicalNetwork", "TimeGrid", "load_fleet", "load_network", "validate_fleet",
    "Solution", "SolverConfig", "WarmStart", "brute_force", "solve",
    "TimeSpaceNetwork", "build_tsnet", "expand",
]
