"""Electrical network model: buses, lines, and loads in the common DQ frame.

The network is an RLC circuit on a graph.  Every bus carries a shunt
capacitance and conductance plus a series-RL load branch; every edge is a
series-RL line.  States are the bus voltages, line currents, and load
currents, all stacked as DQ pairs.  Inverters and constant-power loads enter
only through the per-bus current injection, which keeps this module linear.

Every 2x2 coefficient block has the form ``a*I + b*J`` (the DQ image of a
complex impedance), so inverses reduce to ``(a*I - b*J) / (a^2 + b^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .frames import J, block_j

__all__ = [
    "MicrogridGraph",
    "NetworkParams",
    "incidence_matrix",
    "laplacian",
    "dq_block",
    "dq_diag",
    "dq_diag_inverse",
    "incidence_dq",
    "network_derivatives",
    "network_state_matrices",
    "constant_power_current",
    "reduced_bus_admittance",
]


@dataclass
class MicrogridGraph:
    """Connection topology: ``bus_count`` buses and directed edges.

    Edges are (source, sink) pairs of 0-based bus indices.  Orientation only
    fixes the sign convention of the line-current states; the physics is
    orientation-independent.
    """

    bus_count: int
    edges: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for s, t in self.edges:
            if not (0 <= s < self.bus_count and 0 <= t < self.bus_count):
                raise ValueError(f"edge ({s}, {t}) references a bus outside 0..{self.bus_count - 1}")
            if s == t:
                raise ValueError(f"self-loop edge ({s}, {t}) is not allowed")

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def incidence_matrix(graph: MicrogridGraph) -> NDArray[np.float64]:
    """Bus-by-edge incidence matrix: +1 at the source bus, -1 at the sink."""
    B = np.zeros((graph.bus_count, graph.edge_count))
    for z, (s, t) in enumerate(graph.edges):
        B[s, z] = 1.0
        B[t, z] = -1.0
    return B


def laplacian(graph: MicrogridGraph) -> NDArray[np.float64]:
    """Unweighted graph Laplacian ``B @ B.T`` (positive semidefinite)."""
    B = incidence_matrix(graph)
    return B @ B.T


def dq_block(a: float, b: float) -> NDArray[np.float64]:
    """The 2x2 block ``a*I + b*J``."""
    return np.array([[a, b], [-b, a]])


def dq_diag(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Block-diagonal matrix with 2x2 blocks ``a_k*I + b_k*J``, shape (2n, 2n)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    out = np.zeros((2 * n, 2 * n))
    for k in range(n):
        out[2 * k, 2 * k] = a[k]
        out[2 * k, 2 * k + 1] = b[k]
        out[2 * k + 1, 2 * k] = -b[k]
        out[2 * k + 1, 2 * k + 1] = a[k]
    return out


def dq_diag_inverse(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Inverse of ``dq_diag(a, b)`` via ``(a*I + b*J)^-1 = (a*I - b*J)/(a^2 + b^2)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mag2 = a * a + b * b
    if np.any(mag2 == 0.0):
        raise ValueError("singular 2x2 DQ block (a = b = 0)")
    return dq_diag(a / mag2, -b / mag2)


def incidence_dq(graph: MicrogridGraph) -> NDArray[np.float64]:
    """Incidence matrix lifted to DQ pairs: ``incidence kron I_2``, shape (2nb, 2ne)."""
    return np.kron(incidence_matrix(graph), np.eye(2))


@dataclass
class NetworkParams:
    """Electrical parameters of the bus/line/load circuit (plain SI units).

    Arrays are per-bus (length ``bus_count``) or per-edge (length
    ``edge_count``).  Constant-power loads are separate current injections
    handled by :func:`constant_power_current`; the arrays here describe only
    the passive RLC circuit.
    """

    graph: MicrogridGraph
    line_R: NDArray[np.float64]
    line_L: NDArray[np.float64]
    shunt_C: NDArray[np.float64]
    shunt_G: NDArray[np.float64]
    load_R: NDArray[np.float64]
    load_L: NDArray[np.float64]

    def __post_init__(self) -> None:
        nb, ne = self.graph.bus_count, self.graph.edge_count
        for name, arr, want in (
            ("line_R", self.line_R, ne),
            ("line_L", self.line_L, ne),
            ("shunt_C", self.shunt_C, nb),
            ("shunt_G", self.shunt_G, nb),
            ("load_R", self.load_R, nb),
            ("load_L", self.load_L, nb),
        ):
            arr = np.asarray(arr, dtype=float)
            setattr(self, name, arr)
            if arr.shape != (want,):
                raise ValueError(f"{name} must have shape ({want},), got {arr.shape}")
            if name != "line_R" and np.any(arr <= 0.0):
                raise ValueError(f"{name} entries must be positive")
            if name == "line_R" and np.any(arr <= 0.0):
                raise ValueError("line_R entries must be positive")


def network_derivatives(
    params: NetworkParams,
    v_b: NDArray[np.float64],
    i_line: NDArray[np.float64],
    i_load: NDArray[np.float64],
    i_inj: NDArray[np.float64],
    omega0: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Time derivatives (dv_b, di_line, di_load) of the network states.

    ``i_inj`` is the net external current injected at each bus (inverter
    output currents minus constant-power load currents), shape (2nb,).
    """
    g = params.graph
    nb, ne = g.bus_count, g.edge_count
    C = np.repeat(params.shunt_C, 2)
    Lline = np.repeat(params.line_L, 2)
    Lload = np.repeat(params.load_L, 2)

    Jv = _rot90(v_b)
    Jil = _rot90(i_line)
    Jild = _rot90(i_load)
    Bdq = incidence_dq(g)

    dv = (-np.repeat(params.shunt_G, 2) * v_b + omega0 * C * Jv + i_inj - i_load - Bdq @ i_line) / C
    dil = (-np.repeat(params.line_R, 2) * i_line + omega0 * Lline * Jil + Bdq.T @ v_b) / Lline
    dild = (-np.repeat(params.load_R, 2) * i_load + omega0 * Lload * Jild + v_b) / Lload
    return dv, dil, dild


def _rot90(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Apply blockdiag(J) to a stacked DQ vector: (d, q) -> (q, -d)."""
    out = np.empty_like(x)
    out[0::2] = x[1::2]
    out[1::2] = -x[0::2]
    return out


def network_state_matrices(
    params: NetworkParams, omega0: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """State-space (A, B) of the network with input = bus current injection.

    State ordering is (v_b, i_line, i_load); ``x_dot = A @ x + B @ u`` with
    ``u`` the per-bus injection (2nb,).  Useful for steady-state checks: the
    static bus-voltage response to a constant injection is the corresponding
    rows of ``-A^-1 @ B @ u``.
    """
    g = params.graph
    nb, ne = g.bus_count, g.edge_count
    nx = 2 * nb + 2 * ne + 2 * nb
    A = np.zeros((nx, nx))
    B = np.zeros((nx, 2 * nb))
    sl_v = slice(0, 2 * nb)
    sl_l = slice(2 * nb, 2 * nb + 2 * ne)
    sl_d = slice(2 * nb + 2 * ne, nx)

    Jn_b = block_j(nb)
    Bdq = incidence_dq(g)
    Cinv = np.diag(1.0 / np.repeat(params.shunt_C, 2))
    Llinv = np.diag(1.0 / np.repeat(params.line_L, 2)) if ne else np.zeros((0, 0))
    Ldinv = np.diag(1.0 / np.repeat(params.load_L, 2))

    A[sl_v, sl_v] = Cinv @ (dq_diag(-params.shunt_G, omega0 * params.shunt_C))
    A[sl_v, sl_l] = -Cinv @ Bdq
    A[sl_v, sl_d] = -Cinv
    if ne:
        A[sl_l, sl_l] = Llinv @ dq_diag(-params.line_R, omega0 * params.line_L)
        A[sl_l, sl_v] = Llinv @ Bdq.T
    A[sl_d, sl_d] = Ldinv @ dq_diag(-params.load_R, omega0 * params.load_L)
    A[sl_d, sl_v] = Ldinv
    B[sl_v, :] = Cinv
    return A, B


def constant_power_current(
    v_b: NDArray[np.float64],
    P: NDArray[np.float64],
    Q: NDArray[np.float64],
    v_floor: float,
) -> NDArray[np.float64]:
    """Current drawn by per-bus constant-power loads at bus voltage ``v_b``.

    Solves ``P = v_D i_D + v_Q i_Q`` and ``Q = v_Q i_D - v_D i_Q`` for the
    load current.  Below ``v_floor`` the load degrades continuously to a
    constant admittance (rated at the floor voltage), which removes the
    1/|v| blow-up during faults and start-up transients.
    """
    vD, vQ = v_b[0::2], v_b[1::2]
    denom = np.maximum(vD * vD + vQ * vQ, v_floor * v_floor)
    iD = (vD * P + vQ * Q) / denom
    iQ = (vQ * P - vD * Q) / denom
    out = np.empty_like(v_b)
    out[0::2] = iD
    out[1::2] = iQ
    return out


def reduced_bus_admittance(params: NetworkParams, omega0: float) -> NDArray[np.float64]:
    """Static bus admittance seen by the inverter injections, shape (2nb, 2nb).

    Eliminating the line and load currents at steady state leaves
    ``i_inj = Y1 @ v_b`` with::

        Y1 = (G - w0*C*J) + (R_load - w0*L_load*J)^-1
             + B (R_line - w0*L_line*J)^-1 B.T

    where B is the DQ-lifted incidence matrix.  Each term is the DQ image of
    the corresponding phasor admittance at the nominal frequency.
    """
    g = params.graph
    Y = dq_diag(params.shunt_G, -omega0 * params.shunt_C)
    Y += dq_diag_inverse(params.load_R, -omega0 * params.load_L)
    if g.edge_count:
        Bdq = incidence_dq(g)
        Zline_inv = dq_diag_inverse(params.line_R, -omega0 * params.line_L)
        Y += Bdq @ Zline_inv @ Bdq.T
    return Y
