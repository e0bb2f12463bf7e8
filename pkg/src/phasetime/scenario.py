"""A loaded scenario: network, vehicles, phases, policy and factors in one bundle."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .network import PathAux, RoadNetwork, VehiclePath, derive_path_aux, load_scenario
from .phases import MappingMatrix, PhaseSet, TransitionPolicy, build_mapping, load_phases, parse_policy
from .ptgraph import CostModel, Factors, PsiGraph


@dataclass
class Scenario:
    net: RoadNetwork
    vehicles: list[VehiclePath]
    phases: PhaseSet
    policy: TransitionPolicy
    mapping: MappingMatrix
    factors: Factors = field(default_factory=Factors)
    initial_phase: tuple | None = None
    clearance_in_step: bool = False
    aux: PathAux = field(init=False)

    def __post_init__(self):
        self.aux = derive_path_aux(self.net, self.vehicles)

    @property
    def horizon(self) -> int:
        return self.net.horizon

    def zero_lambda(self) -> np.ndarray:
        return np.zeros((len(self.mapping.links), self.horizon))

    def graph(self) -> PsiGraph:
        return PsiGraph(self.phases, self.policy, self.horizon, self.initial_phase,
                        clearance_in_step=self.clearance_in_step)

    def costs(self, lam: np.ndarray) -> CostModel:
        return CostModel(lam, self.mapping, self.net, self.factors)

    def with_policy(self, policy: TransitionPolicy) -> "Scenario":
        return replace(self, policy=policy)

    def with_vehicles(self, vehicles: list[VehiclePath]) -> "Scenario":
        return replace(self, vehicles=sorted(vehicles, key=lambda v: v.vid))


def build_scenario(network_doc, vehicles_doc, phases_doc, *, policy: str | dict | None = None,
                   rho_y=None, delta=None) -> Scenario:
    net, vehicles = load_scenario(network_doc, vehicles_doc)
    phase_set, pol, settings = load_phases(phases_doc, net)
    if isinstance(policy, str):
        policy = {"mode": policy}
        if policy["mode"] == pol.mode:
            policy = None
    if policy is not None:
        pol = parse_policy(policy, phase_set)
    d = Fraction(str(delta)) if delta is not None else settings.get("delta", Fraction(1, 2))
    ry = Fraction(str(rho_y)) if rho_y is not None else settings.get("rho_y", Fraction(1, 2))
    if not 0 < ry < 1:
        raise ValueError("rho_y must lie strictly between 0 and 1")
    mapping = build_mapping(phase_set, net, d)
    return Scenario(net, vehicles, phase_set, pol, mapping, Factors(rho_y=ry), settings.get("initial_phase"))


def load_scenario_dir(path, **overrides) -> Scenario:
    """Read ``network.json``, ``vehicles.json`` and ``phases.json`` from ``path``."""
    path = Path(path)
    docs = [json.loads((path / name).read_text()) for name in ("network.json", "vehicles.json", "phases.json")]
    return build_scenario(*docs, **overrides)
