"""Decentralized optimal-control flocking: planning, simulation and diagnostics."""

from __future__ import annotations

from .core import BoidState, ConfigError, FlockConfig, NumericInputError, integrate_step
from .planner import PlanProblem, Planner, PlannerSettings, PlanSolution, Trajectory, plan
from .simulator import Placement, ScenarioSpec, SimulationLog, TrajectoryRegistry, run

__version__ = "0.1.0"

__all__ = [
    "BoidState",
    "ConfigError",
    "FlockConfig",
    "NumericInputError",
    "Placement",
    "PlanProblem",
    "PlanSolution",
    "Planner",
    "PlannerSettings",
    "ScenarioSpec",
    "SimulationLog",
    "Trajectory",
    "TrajectoryRegistry",
    "integrate_step",
    "plan",
    "run",
    "__version__",
]
