"""Simulation and certification toolkit for inverter-based microgrids.

Grid-forming inverters with angle-droop primary control, DC-link and
cascaded AC voltage regulation, and consensus-based secondary frequency
control, connected through an RLC network.  The package simulates the full
nonlinear closed loop, solves its equilibria, linearizes each inverter
exactly, and runs three certification checks: output-port passivity by
frequency sweep, proportional active-power sharing, and secondary-control
stability under an operating-point perturbation bound.
"""

from .certificates import Certificate
from .certify import (
    ReducedModel,
    build_F,
    build_M,
    build_Y2,
    consensus_spectrum,
    reduced_model,
    reduced_secondary_simulate,
    secondary_consensus_certificate,
)
from .controllers import ControlGains
from .inverter import InverterBank, InverterParams
from .linearize import (
    Equilibrium,
    LinearizedSystem,
    build_linearized,
    nominal_operating_point,
    solve_equilibrium,
)
from .network import MicrogridGraph, NetworkParams
from .passivity import (
    PassivitySweep,
    certify_inverters,
    find_passive_kI,
    passivity_sweep,
)
from .scenario import (
    ScenarioError,
    bundled_scenario_names,
    bundled_scenario_path,
    emit_scenario,
    parse_scenario,
    random_benchmark_spec,
)
from .secondary import check_power_sharing
from .sim import (
    Event,
    Scenario,
    SimulationDiverged,
    Trajectory,
    simulate,
    steady_state_report,
)
from .system import Configuration, MicrogridSpec, StateLayout

__all__ = [
    "Certificate",
    "ControlGains",
    "InverterBank",
    "InverterParams",
    "MicrogridGraph",
    "NetworkParams",
    "Configuration",
    "MicrogridSpec",
    "StateLayout",
    "Equilibrium",
    "LinearizedSystem",
    "build_linearized",
    "nominal_operating_point",
    "solve_equilibrium",
    "PassivitySweep",
    "passivity_sweep",
    "certify_inverters",
    "find_passive_kI",
    "ReducedModel",
    "build_Y2",
    "build_F",
    "build_M",
    "reduced_model",
    "secondary_consensus_certificate",
    "consensus_spectrum",
    "reduced_secondary_simulate",
    "check_power_sharing",
    "Event",
    "Scenario",
    "Trajectory",
    "SimulationDiverged",
    "simulate",
    "steady_state_report",
    "ScenarioError",
    "parse_scenario",
    "emit_scenario",
    "bundled_scenario_names",
    "bundled_scenario_path",
    "random_benchmark_spec",
]

__version__ = "0.1.0"
