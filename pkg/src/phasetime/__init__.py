"""Centralized adaptive signal control on a generalized phase-time network."""
from .network import RoadNetwork, Link, VehiclePath, ScenarioError, load_scenario, derive_path_aux
from .phases import generate_generalized_phases, build_mapping, successors, TransitionPolicy
from .ptgraph import PhaseTimeArc, SignalPlan, Factors, arc_cost, shortest_plan, plan_to_gamma
from .scenario import Scenario, load_scenario_dir

__all__ = [
    "RoadNetwork", "Link", "VehiclePath", "ScenarioError", "load_scenario", "derive_path_aux",
    "generate_generalized_phases", "build_mapping", "successors", "TransitionPolicy",
    "PhaseTimeArc", "SignalPlan", "Factors", "arc_cost", "shortest_plan", "plan_to_gamma",
    "Scenario", "load_scenario_dir",
]
__version__ = "0.1.0"
