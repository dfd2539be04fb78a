"""Session fixtures: the bundled systems, their solved equilibria, and the
one expensive full-horizon run (shared by the steady-state acceptance tests
and the trajectory tests)."""

from __future__ import annotations

import numpy as np
import pytest

from gridforming.linearize import build_linearized, solve_equilibrium
from gridforming.scenario import bundled_scenario_path, parse_scenario
from gridforming.sim import simulate


@pytest.fixture(scope="session")
def table1():
    """(spec, scenario) of the five-bus reference system."""
    return parse_scenario(bundled_scenario_path("table1_5bus"))


@pytest.fixture(scope="session")
def table1_eq(table1):
    spec, scen = table1
    eq = solve_equilibrium(
        spec, secondary_on=scen.secondary_on, online=scen.online0, chi0=scen.chi0
    )
    assert eq.converged, f"reference equilibrium did not converge: {eq.residual:.3e}"
    return eq


@pytest.fixture(scope="session")
def table1_lin(table1, table1_eq):
    spec, _ = table1
    return build_linearized(spec, table1_eq.point)


@pytest.fixture(scope="session")
def table1_run(table1):
    """Full five-second run of the load-step scenario (the expensive one)."""
    _, scen = table1
    return simulate(scen)


@pytest.fixture(scope="session")
def table2():
    return parse_scenario(bundled_scenario_path("table2_2inv"))


@pytest.fixture(scope="session")
def table2_eq(table2):
    spec, scen = table2
    eq = solve_equilibrium(
        spec, secondary_on=scen.secondary_on, online=scen.online0, chi0=scen.chi0
    )
    assert eq.converged
    return eq


@pytest.fixture(scope="session")
def plugplay():
    return parse_scenario(bundled_scenario_path("plugplay_3inv"))
