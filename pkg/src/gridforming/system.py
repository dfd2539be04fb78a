"""Closed-loop microgrid assembly: inverters + controllers + network.

This module owns the canonical state layout and the full nonlinear vector
field.  Everything downstream (time-domain simulation, equilibrium solving,
linearization) evaluates the same field, so there is exactly one definition
of the dynamics.

State vector for ``m`` online inverters on ``nb`` buses with ``ne`` lines::

    [ delta (m) | zeta (m) | v_dc (m) | i_DQ (2m) | v_o (2m) | i_o (2m)
      | beta (2m) | xi (2m) | chi (m) | v_b (2nb) | i_line (2ne) | i_load (2nb)
      | i_cpl (2nb) ]

The first eight blocks (13m entries) are the per-inverter states in the
ordering the linearization uses; ``chi`` is the secondary-control correction;
the remainder is the network plus the constant-power load currents.

Constant-power loads track their power reference through a first-order lag
(``cpl_tau``, default 1 ms) rather than algebraically.  An ideal
constant-power draw has incremental conductance ``-P/V^2``; against the
small bus shunt capacitance that creates parasitic unstable poles around
``P/(V^2 C)`` (hundreds of krad/s) and the model becomes unintegrable.  Real
rectifier-type loads regulate with finite bandwidth, which is exactly what
the lag restores; at frequencies above ``1/cpl_tau`` the load looks like a
constant current source.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from .controllers import ControlGains, ac_voltage_law, dc_law, frequency_law
from .inverter import InverterBank, electrical_derivatives
from .network import (
    MicrogridGraph,
    NetworkParams,
    constant_power_current,
    incidence_dq,
    network_derivatives,
)
from .secondary import secondary_derivative

__all__ = ["MicrogridSpec", "StateLayout", "Configuration", "closed_loop_rhs", "comm_laplacian"]

NOMINAL_OMEGA = 2.0 * np.pi * 50.0


@dataclass
class MicrogridSpec:
    """Complete description of one microgrid.

    ``inverter_bus[j]`` is the bus inverter ``j`` connects to (several units
    may share a bus; buses without a unit are passive).  ``cpl_P``/``cpl_Q``
    are the always-on constant-power loads per bus; events may add or remove
    more during a simulation.  ``comm_edges`` lists inverter-index pairs that
    exchange secondary-control data; by default units communicate iff their
    buses coincide or are joined by a line.
    """

    network: NetworkParams
    inverters: InverterBank
    gains: ControlGains
    inverter_bus: NDArray[np.int_]
    omega0: float = NOMINAL_OMEGA
    cpl_P: NDArray[np.float64] | None = None
    cpl_Q: NDArray[np.float64] | None = None
    secondary_alpha: float = 667.0
    comm_edges: list[tuple[int, int]] | None = None
    cpl_floor_frac: float = 0.4
    cpl_tau: float = 1e-3

    def __post_init__(self) -> None:
        nb = self.network.graph.bus_count
        n = self.inverters.count
        self.inverter_bus = np.asarray(self.inverter_bus, dtype=int)
        if self.inverter_bus.shape != (n,):
            raise ValueError(f"inverter_bus must have {n} entries")
        if np.any(self.inverter_bus < 0) or np.any(self.inverter_bus >= nb):
            raise ValueError("inverter_bus entries must be valid bus indices")
        if self.gains.count != n:
            raise ValueError("gains and inverter bank disagree on the number of units")
        if self.cpl_P is None:
            self.cpl_P = np.zeros(nb)
        if self.cpl_Q is None:
            self.cpl_Q = np.zeros(nb)
        self.cpl_P = np.asarray(self.cpl_P, dtype=float)
        self.cpl_Q = np.asarray(self.cpl_Q, dtype=float)
        if self.cpl_P.shape != (nb,) or self.cpl_Q.shape != (nb,):
            raise ValueError(f"cpl_P and cpl_Q must have {nb} entries")
        if self.comm_edges is None:
            self.comm_edges = self._default_comm_edges()

    @property
    def n_inverters(self) -> int:
        return self.inverters.count

    def _default_comm_edges(self) -> list[tuple[int, int]]:
        n = self.inverters.count
        bus_of = self.inverter_bus
        line_pairs = {frozenset(e) for e in self.network.graph.edges}
        edges = []
        for j in range(n):
            for k in range(j + 1, n):
                if bus_of[j] == bus_of[k] or frozenset((bus_of[j], bus_of[k])) in line_pairs:
                    edges.append((j, k))
        return edges

    def restricted(self, online: NDArray[np.bool_]) -> "MicrogridSpec":
        """Spec with only the ``online`` inverters present (network unchanged)."""
        online = np.asarray(online, dtype=bool)
        idx = np.where(online)[0]
        remap = {int(old): new for new, old in enumerate(idx)}
        bank = InverterBank(
            **{f: getattr(self.inverters, f)[idx]
               for f in ("R_f", "L_f", "C_f", "G_s", "R_c", "L_c", "C_dc", "G_dc")}
        )
        g = self.gains
        gains = ControlGains(
            k_p=g.k_p[idx], k_I=g.k_I[idx], n_q=g.n_q[idx], c_p=g.c_p[idx], c_I=g.c_I[idx],
            lambda_P=g.lambda_P[idx], lambda_I=g.lambda_I[idx],
            Lambda_P=g.Lambda_P[idx], Lambda_I=g.Lambda_I[idx],
            v_dc_ref=g.v_dc_ref, V_n=g.V_n, i_max=g.i_max[idx],
        )
        comm = [
            (remap[a], remap[b])
            for a, b in self.comm_edges
            if a in remap and b in remap
        ]
        return replace(
            self,
            inverters=bank,
            gains=gains,
            inverter_bus=self.inverter_bus[idx],
            comm_edges=comm,
        )


def comm_laplacian(spec: MicrogridSpec) -> NDArray[np.float64]:
    """Unweighted Laplacian of the secondary-control communication graph."""
    n = spec.n_inverters
    L = np.zeros((n, n))
    for a, b in spec.comm_edges:
        L[a, a] += 1.0
        L[b, b] += 1.0
        L[a, b] -= 1.0
        L[b, a] -= 1.0
    return L


@dataclass(frozen=True)
class StateLayout:
    """Index map into the packed state vector."""

    n_inv: int
    n_bus: int
    n_edge: int

    @property
    def size(self) -> int:
        return 14 * self.n_inv + 6 * self.n_bus + 2 * self.n_edge

    @property
    def inverter_block(self) -> slice:
        """The 13m-entry inverter+controller block the linearization covers."""
        return slice(0, 13 * self.n_inv)

    def _starts(self) -> dict[str, tuple[int, int]]:
        m, nb, ne = self.n_inv, self.n_bus, self.n_edge
        sizes = [
            ("delta", m), ("zeta", m), ("v_dc", m), ("i_dq", 2 * m),
            ("v_o", 2 * m), ("i_o", 2 * m), ("beta", 2 * m), ("xi", 2 * m),
            ("chi", m), ("v_b", 2 * nb), ("i_line", 2 * ne), ("i_load", 2 * nb),
            ("i_cpl", 2 * nb),
        ]
        out, pos = {}, 0
        for name, sz in sizes:
            out[name] = (pos, pos + sz)
            pos += sz
        return out

    def __getattr__(self, name: str) -> slice:
        starts = object.__getattribute__(self, "_starts")()
        if name in starts:
            a, b = starts[name]
            return slice(a, b)
        raise AttributeError(name)

    def unpack(self, x: NDArray[np.float64]) -> dict[str, NDArray[np.float64]]:
        return {name: x[slice(*se)] for name, se in self._starts().items()}

    def pack(self, **blocks: NDArray[np.float64]) -> NDArray[np.float64]:
        x = np.zeros(self.size)
        starts = self._starts()
        for name, val in blocks.items():
            a, b = starts[name]
            val = np.asarray(val, dtype=float)
            if val.size != b - a:
                raise ValueError(f"block {name} must have {b - a} entries, got {val.size}")
            x[a:b] = val
        return x


@dataclass
class Configuration:
    """Piecewise-constant simulation configuration between events."""

    online: NDArray[np.bool_]
    cpl_P: NDArray[np.float64]
    cpl_Q: NDArray[np.float64]
    secondary_on: bool

    @classmethod
    def initial(cls, spec: MicrogridSpec, secondary_on: bool = True,
                online: NDArray[np.bool_] | None = None) -> "Configuration":
        if online is None:
            online = np.ones(spec.n_inverters, dtype=bool)
        return cls(
            online=np.asarray(online, dtype=bool),
            cpl_P=spec.cpl_P.copy(),
            cpl_Q=spec.cpl_Q.copy(),
            secondary_on=secondary_on,
        )


def attachment_matrix(spec: MicrogridSpec) -> NDArray[np.float64]:
    """(2nb, 2m) map from stacked inverter DQ outputs to per-bus injections."""
    nb = spec.network.graph.bus_count
    m = spec.n_inverters
    M = np.zeros((2 * nb, 2 * m))
    for j, b in enumerate(spec.inverter_bus):
        M[2 * b, 2 * j] = 1.0
        M[2 * b + 1, 2 * j + 1] = 1.0
    return M


def closed_loop_rhs(spec: MicrogridSpec, config: Configuration):
    """Build the full closed-loop vector field for one configuration.

    Returns ``(active_spec, layout, f)`` where ``active_spec`` is the spec
    restricted to the online units, ``layout`` indexes the packed state, and
    ``f(x) -> dx`` evaluates the dynamics.  The field is autonomous; events
    are handled by rebuilding it per segment.
    """
    sub = spec.restricted(config.online) if not config.online.all() else spec
    m = sub.n_inverters
    g = sub.network.graph
    layout = StateLayout(m, g.bus_count, g.edge_count)

    gains = sub.gains
    bank = sub.inverters
    omega0 = sub.omega0
    att = attachment_matrix(sub)
    L_comm = comm_laplacian(sub) if config.secondary_on else None
    alpha = sub.secondary_alpha
    cpl_P = config.cpl_P.copy()
    cpl_Q = config.cpl_Q.copy()
    v_floor = sub.cpl_floor_frac * gains.V_n
    cpl_tau = sub.cpl_tau

    sl = {name: slice(*se) for name, se in layout._starts().items()}
    net = sub.network

    def f(x: NDArray[np.float64]) -> NDArray[np.float64]:
        delta = x[sl["delta"]]
        zeta = x[sl["zeta"]]
        v_dc = x[sl["v_dc"]]
        i_dq = x[sl["i_dq"]]
        v_o = x[sl["v_o"]]
        i_o = x[sl["i_o"]]
        beta = x[sl["beta"]]
        xi = x[sl["xi"]]
        chi = x[sl["chi"]]
        v_b = x[sl["v_b"]]
        i_line = x[sl["i_line"]]
        i_load = x[sl["i_load"]]
        i_cpl = x[sl["i_cpl"]]

        omega = frequency_law(gains, delta, i_o, chi, omega0)
        i_dc, dzeta = dc_law(gains, v_dc, zeta)
        m_dq, dbeta, dxi, _, _ = ac_voltage_law(
            gains, delta, v_dc, i_dq, v_o, i_o, beta, xi
        )

        v_bus_at = att.T @ v_b
        dv_dc, di_dq, dv_o, di_o = electrical_derivatives(
            bank, v_dc, i_dq, v_o, i_o, m_dq, i_dc, v_bus_at, omega0
        )

        i_inj = att @ i_o - i_cpl
        dv_b, di_line, di_load = network_derivatives(
            net, v_b, i_line, i_load, i_inj, omega0
        )
        i_cpl_target = constant_power_current(v_b, cpl_P, cpl_Q, v_floor)
        di_cpl = (i_cpl_target - i_cpl) / cpl_tau

        dx = np.empty_like(x)
        dx[sl["delta"]] = omega - omega0
        dx[sl["zeta"]] = dzeta
        dx[sl["v_dc"]] = dv_dc
        dx[sl["i_dq"]] = di_dq
        dx[sl["v_o"]] = dv_o
        dx[sl["i_o"]] = di_o
        dx[sl["beta"]] = dbeta
        dx[sl["xi"]] = dxi
        if L_comm is not None:
            dx[sl["chi"]] = secondary_derivative(chi, delta, gains.k_I, alpha, L_comm)
        else:
            dx[sl["chi"]] = 0.0
        dx[sl["v_b"]] = dv_b
        dx[sl["i_line"]] = di_line
        dx[sl["i_load"]] = di_load
        dx[sl["i_cpl"]] = di_cpl
        return dx

    return sub, layout, f
