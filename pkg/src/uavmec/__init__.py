"""UAV-assisted MEC total-energy minimizer: dual resource solver, SCA trajectory
design, joint optimizer, baselines and experiment CLI."""

from .scenario import (AeroParams, DualVariables, ResourceAllocation, Scenario,
                       ScenarioError, SolveReport, Trajectory, default_scenario,
                       load_scenario, save_scenario)

__all__ = [
    "AeroParams", "DualVariables", "ResourceAllocation", "Scenario",
    "ScenarioError", "SolveReport", "Trajectory", "default_scenario",
    "load_scenario", "save_scenario",
]

__version__ = "0.1.0"
