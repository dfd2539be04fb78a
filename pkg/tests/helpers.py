"""Shared numerical helpers for the test suite.

Independent reference computations live here so that the assertions in the
test modules check the package against externally constructed oracles
(central finite differences, complex phasor arithmetic, exact piecewise-LTI
integration) rather than against itself.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from gridforming.certify import build_F, build_M, build_Y2
from gridforming.controllers import ControlGains
from gridforming.inverter import InverterBank, InverterParams
from gridforming.linearize import build_linearized, inverter_field
from gridforming.network import MicrogridGraph, NetworkParams
from gridforming.system import MicrogridSpec


def fd_jacobian(field, z0: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian with per-column relative steps."""
    n = z0.size
    jac = np.empty((n, n))
    for k in range(n):
        dz = np.zeros(n)
        dz[k] = h * max(1.0, abs(z0[k]))
        jac[:, k] = (field(z0 + dz) - field(z0 - dz)) / (2.0 * dz[k])
    return jac


def closed_loop_fd_error(spec, eq) -> float:
    """Max entrywise relative gap between the assembled closed-loop matrix
    and a finite-difference Jacobian of the nonlinear inverter+controller
    field, both frozen at the solved operating point."""
    u = eq.unpack()
    v_b_ports = np.concatenate(
        [u["v_b"][2 * b: 2 * b + 2] for b in spec.inverter_bus]
    )
    field = inverter_field(spec, v_b_ports, u["chi"])
    z0 = np.concatenate([
        u["delta"], u["zeta"], u["v_dc"], u["i_dq"], u["v_o"], u["i_o"],
        u["beta"], u["xi"],
    ])
    lin = build_linearized(spec, eq.point)
    jac = fd_jacobian(field, z0)
    return float(np.max(np.abs(jac - lin.A_cl)) / np.max(np.abs(lin.A_cl)))


def lemma_M(spec, delta_star: np.ndarray) -> np.ndarray:
    """The consensus correction matrix in the form the dominance result is
    stated for: only the (uniform) ratio k_I/k_p enters, so it is evaluated
    at a uniform droop gain.  Dominance is not invariant under the diagonal
    similarity that maps this form to the per-unit-gain assembly."""
    n = spec.n_inverters
    tau = float((spec.gains.k_I / spec.gains.k_p).mean())
    k_bar = float(spec.gains.k_p.mean())
    f_matrix = build_F(build_Y2(spec), delta_star)
    return build_M(
        f_matrix, np.full(n, k_bar), np.full(n, k_bar * tau), spec.gains.V_n
    )


def dominance_gaps(m: np.ndarray) -> tuple[float, float, float]:
    """(min row gap, min column gap, min diagonal) for strict dominance."""
    diag = np.diag(m)
    row_off = np.sum(np.abs(m), axis=1) - np.abs(diag)
    col_off = np.sum(np.abs(m), axis=0) - np.abs(diag)
    return (
        float(np.min(np.abs(diag) - row_off)),
        float(np.min(np.abs(diag) - col_off)),
        float(diag.min()),
    )


def exact_lti_step(a: np.ndarray, b: np.ndarray, h: float):
    """Exact one-step maps for x' = A x + B u with u held constant.

    Returns ``(Ad, Bd, S, Q)`` with ``x(h) = Ad x0 + Bd u`` and
    ``int_0^h x dt = S x0 + Q u`` (both closed-form, so supply integrals
    computed from them carry no quadrature error).
    """
    n = a.shape[0]
    ad = expm(a * h)
    s = np.linalg.solve(a, ad - np.eye(n))
    bd = s @ b
    q = np.linalg.solve(a, s - h * np.eye(n)) @ b
    return ad, bd, s, q


def two_inverter_spec(symmetric: bool = False) -> MicrogridSpec:
    """Small, well-damped two-inverter system used for integrator and
    equilibrium tests (reference-design inverters on a single line)."""
    graph = MicrogridGraph(2, [(0, 1)])
    if symmetric:
        load_r, load_l = np.full(2, 20.0), np.full(2, 30e-3)
    else:
        load_r, load_l = np.array([20.0, 25.0]), np.array([30e-3, 20e-3])
    net = NetworkParams(
        graph=graph,
        line_R=np.array([0.1]),
        line_L=np.array([3e-3]),
        shunt_C=np.full(2, 0.1e-6),
        shunt_G=np.full(2, 1e-3),
        load_R=load_r,
        load_L=load_l,
    )
    return MicrogridSpec(
        network=net,
        inverters=InverterBank.from_units([InverterParams()] * 2),
        gains=ControlGains.uniform(2),
        inverter_bus=np.array([0, 1]),
    )


def complex_port_admittance(spec) -> np.ndarray:
    """Phasor-arithmetic reference for the reference-to-current admittance,
    valid when the reactive droop is zero: eliminate the bus network in
    complex form, add the coupling impedances, and invert."""
    net = spec.network
    y_bus = np.diag(net.shunt_G + 1j * spec.omega0 * net.shunt_C)
    y_bus += np.diag(1.0 / (net.load_R + 1j * spec.omega0 * net.load_L))
    from gridforming.network import incidence_matrix

    b = incidence_matrix(net.graph)
    y_bus += b @ np.diag(1.0 / (net.line_R + 1j * spec.omega0 * net.line_L)) @ b.T
    z_port = np.linalg.inv(y_bus)[np.ix_(spec.inverter_bus, spec.inverter_bus)]
    z_port = z_port + np.diag(spec.inverters.R_c + 1j * spec.omega0 * spec.inverters.L_c)
    return np.linalg.inv(z_port)


def dq_blocks_match_complex(real_block_matrix: np.ndarray, complex_matrix: np.ndarray) -> float:
    """Max absolute deviation between a 2x2-block real matrix and the
    real-block embedding a + jb -> [[a, -b], [b, a]] of a complex matrix."""
    n = complex_matrix.shape[0]
    worst = 0.0
    for i in range(n):
        for j in range(n):
            blk = real_block_matrix[2 * i: 2 * i + 2, 2 * j: 2 * j + 2]
            z = complex_matrix[i, j]
            want = np.array([[z.real, -z.imag], [z.imag, z.real]])
            worst = max(worst, float(np.max(np.abs(blk - want))))
    return worst
