"""Equilibrium solving and exact linearization of the closed loop.

The linearization covers the inverter + controller block (13 states per
unit: angle, DC integrator, DC voltage, filter current, filter-capacitor
voltage, output current, outer and inner AC integrators) with the sign-
inverted bus voltage as input ``u = -v_b`` and the output current as output,
so each unit becomes a square 2x2 port for the passivity analysis.  The
network is deliberately outside this block; it closes the loop through the
port.

Matrices are assembled analytically from the operating point; the test
suite checks them against central finite differences of the nonlinear
field, which is the authoritative definition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import root as scipy_root

from .controllers import ControlGains, ac_voltage_law, dc_law, frequency_law
from .inverter import InverterBank, electrical_derivatives
from .network import constant_power_current, dq_block
from .system import Configuration, MicrogridSpec, StateLayout, closed_loop_rhs

__all__ = [
    "OperatingPoint",
    "Equilibrium",
    "LinearizedSystem",
    "solve_equilibrium",
    "nominal_operating_point",
    "build_linearized",
    "transfer_function",
    "unit_state_indices",
    "inverter_field",
]


@dataclass
class OperatingPoint:
    """Per-unit steady values the linearized matrices depend on."""

    delta: NDArray[np.float64]
    v_dc: NDArray[np.float64]
    i_dq: NDArray[np.float64]
    i_ref: NDArray[np.float64]
    m_dq: NDArray[np.float64]


@dataclass
class Equilibrium:
    """Solved equilibrium of one configuration of the closed loop.

    ``spec`` is the active spec (offline units removed); ``x`` is the packed
    state in ``layout`` order.  ``residual`` is the infinity norm of the
    stationarity system actually solved (field plus the mean-chi anchor when
    secondary control is active).
    """

    spec: MicrogridSpec
    layout: StateLayout
    x: NDArray[np.float64]
    residual: float
    converged: bool
    secondary_on: bool

    def unpack(self) -> dict[str, NDArray[np.float64]]:
        return self.layout.unpack(self.x)

    @property
    def point(self) -> OperatingPoint:
        u = self.unpack()
        g = self.spec.gains
        m_dq, _, _, i_ref, _ = ac_voltage_law(
            g, u["delta"], u["v_dc"], u["i_dq"], u["v_o"], u["i_o"],
            u["beta"], u["xi"],
        )
        return OperatingPoint(
            delta=u["delta"], v_dc=u["v_dc"], i_dq=u["i_dq"],
            i_ref=i_ref, m_dq=m_dq,
        )

    @property
    def i_dc(self) -> NDArray[np.float64]:
        u = self.unpack()
        return dc_law(self.spec.gains, u["v_dc"], u["zeta"])[0]

    @property
    def omega(self) -> NDArray[np.float64]:
        u = self.unpack()
        return frequency_law(self.spec.gains, u["delta"], u["i_o"], u["chi"], self.spec.omega0)


def _flat_start(spec: MicrogridSpec, layout: StateLayout) -> NDArray[np.float64]:
    m, nb = layout.n_inv, layout.n_bus
    Vn = spec.gains.V_n
    v_b = np.zeros(2 * nb)
    v_b[0::2] = Vn
    v_o = np.zeros(2 * m)
    v_o[0::2] = Vn
    return layout.pack(v_dc=np.full(m, spec.gains.v_dc_ref), v_o=v_o, v_b=v_b)


def solve_equilibrium(
    spec: MicrogridSpec,
    secondary_on: bool = True,
    online: NDArray[np.bool_] | None = None,
    chi0: NDArray[np.float64] | None = None,
    x0: NDArray[np.float64] | None = None,
    tol: float = 1e-8,
    presim_time: float = 0.0,
    config: Configuration | None = None,
) -> Equilibrium:
    """Solve the stationarity system of the closed loop.

    With secondary control active the consensus dynamics conserve
    ``sum(chi)``, so the equilibrium family is one-dimensional; the solver
    anchors ``mean(chi)`` at the mean of ``chi0`` (default 0), which matches
    the point a simulation started at ``chi0`` converges to.  With secondary
    control off, ``chi`` is held fixed at ``chi0`` (per-unit setpoints).

    Starts from a flat profile (nominal voltages, zero currents and angles)
    unless ``x0`` is given; if the root search stalls it retries after a
    short settling simulation (``presim_time`` is the fallback horizon,
    default 0.5 s when triggered).
    """
    if config is None:
        config = Configuration.initial(spec, secondary_on=secondary_on, online=online)
    sub, layout, f = closed_loop_rhs(spec, config)
    m = layout.n_inv
    if chi0 is None:
        chi0 = np.zeros(m)
    chi0 = np.asarray(chi0, dtype=float)
    chi_mean = float(np.mean(chi0)) if m else 0.0

    def stationarity(x: NDArray[np.float64]) -> NDArray[np.float64]:
        dx = f(x).copy()
        if config.secondary_on:
            dx[layout.chi] += np.mean(x[layout.chi]) - chi_mean
        else:
            dx[layout.chi] = x[layout.chi] - chi0
        return dx

    if x0 is None:
        x0 = _flat_start(sub, layout)
        x0[layout.chi] = chi0
        x0[layout.i_cpl] = constant_power_current(
            x0[layout.v_b], config.cpl_P, config.cpl_Q,
            sub.cpl_floor_frac * sub.gains.V_n,
        )
    x0 = np.asarray(x0, dtype=float)

    # The root search probes trial points where the bilinear terms overflow;
    # hybr rejects those steps on its own, so keep the noise quiet.
    with np.errstate(over="ignore", invalid="ignore"):
        sol = scipy_root(stationarity, x0, method="hybr", tol=1e-13)
        residual = float(np.max(np.abs(stationarity(sol.x))))
        x = sol.x
        # restarting the search at its own output polishes the last digits away
        for _ in range(3):
            if residual <= 0.01 * tol:
                break
            sol = scipy_root(stationarity, x, method="hybr", tol=1e-13)
            res2 = float(np.max(np.abs(stationarity(sol.x))))
            if res2 >= residual:
                break
            residual, x = res2, sol.x

        if residual > tol:
            horizon = presim_time if presim_time > 0.0 else 0.5
            x_settled = _settle(f, x0, horizon, step=2e-5)
            sol = scipy_root(stationarity, x_settled, method="hybr", tol=1e-13)
            res2 = float(np.max(np.abs(stationarity(sol.x))))
            if res2 < residual:
                residual, x = res2, sol.x

    # Stiff parameter draws (small filter inductances) put the roundoff
    # floor of a single field evaluation above any fixed absolute tolerance;
    # accept residuals within a few ulp-responses of the field at x.
    accept = tol
    if residual > tol:
        bump = np.where(x != 0.0, x * (1.0 + 2.0**-48), 2.0**-48)
        ulp_response = float(np.max(np.abs(stationarity(bump) - stationarity(x)))) / 16.0
        accept = max(tol, 8.0 * ulp_response)

    return Equilibrium(
        spec=sub, layout=layout, x=x, residual=residual,
        converged=residual <= accept, secondary_on=config.secondary_on,
    )


def _settle(f, x0: NDArray[np.float64], horizon: float, step: float) -> NDArray[np.float64]:
    """Crude fixed-step RK4 settling run used as a root-search fallback.

    Stops quietly at the last finite iterate if the trial state blows up
    (an unstable configuration); the caller's root search then reports
    non-convergence on its own terms.
    """
    x = x0.copy()
    nsteps = int(round(horizon / step))
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(nsteps):
            k1 = f(x)
            k2 = f(x + 0.5 * step * k1)
            k3 = f(x + 0.5 * step * k2)
            k4 = f(x + step * k3)
            nxt = x + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(nxt)):
                return x
            x = nxt
    return x


def nominal_operating_point(spec: MicrogridSpec, units: NDArray[np.int_] | None = None) -> OperatingPoint:
    """No-load nominal point of isolated units (open output, nominal voltage).

    Used to certify an inverter before it is plugged into the grid: angle
    zero, DC link at its reference, capacitor at the nominal amplitude, zero
    output current; the filter current exactly feeds the capacitor shunt.
    """
    if units is None:
        units = np.arange(spec.n_inverters)
    units = np.atleast_1d(np.asarray(units, dtype=int))
    g, bank, w0 = spec.gains, spec.inverters, spec.omega0
    k = units.size
    Vn, vr = g.V_n, g.v_dc_ref
    delta = np.zeros(k)
    v_dc = np.full(k, vr)
    i_dq = np.zeros(2 * k)
    m_dq = np.zeros(2 * k)
    for a, j in enumerate(units):
        # v_o = (Vn, 0); filter current feeds the capacitor shunt admittance
        i = np.array([bank.G_s[j] * Vn, w0 * bank.C_f[j] * Vn])
        i_dq[2 * a : 2 * a + 2] = i
        Zf = dq_block(bank.R_f[j], -w0 * bank.L_f[j])
        m_dq[2 * a : 2 * a + 2] = 2.0 / vr * (Zf @ i + np.array([Vn, 0.0]))
    return OperatingPoint(delta=delta, v_dc=v_dc, i_dq=i_dq, i_ref=i_dq.copy(), m_dq=m_dq)


def unit_state_indices(j: int, n: int) -> NDArray[np.int_]:
    """Stacked-state indices of unit ``j``'s 13 linearization states.

    Blocks are stacked by quantity across units (all angles, then all DC
    integrators, ...), so one unit's states are scattered; this gathers them
    in the per-unit order [delta, zeta, v_dc, iD, iQ, voD, voQ, ioD, ioQ,
    betaD, betaQ, xiD, xiQ].
    """
    return np.array([
        j, n + j, 2 * n + j,
        3 * n + 2 * j, 3 * n + 2 * j + 1,
        5 * n + 2 * j, 5 * n + 2 * j + 1,
        7 * n + 2 * j, 7 * n + 2 * j + 1,
        9 * n + 2 * j, 9 * n + 2 * j + 1,
        11 * n + 2 * j, 11 * n + 2 * j + 1,
    ])


@dataclass
class LinearizedSystem:
    """Stacked linearization of all units around an operating point.

    ``A`` is the open-loop state matrix (modulation and frequency feedback
    removed), ``B`` the modulation input matrix, ``B_u`` the port input
    matrix for ``u = -v_b``, ``C`` the port output (output currents),
    ``C_delta`` the angle read-out, ``K_hat`` the modulation feedback gain
    (``m_tilde = -K_hat @ x_tilde``), and ``A_cl`` the closed loop
    ``A - C_delta.T kp e.T C - C_delta.T kI C_delta - B K_hat``.  ``B_chi``
    maps secondary corrections into the angle dynamics.  All feedback paths
    are internal to each unit, so every matrix is unit-block separable;
    ``unit(j)`` extracts one unit's (A_cl, B_u, C).
    """

    A: NDArray[np.float64]
    B: NDArray[np.float64]
    B_u: NDArray[np.float64]
    C: NDArray[np.float64]
    C_delta: NDArray[np.float64]
    D_u: NDArray[np.float64]
    K_hat: NDArray[np.float64]
    A_cl: NDArray[np.float64]
    B_chi: NDArray[np.float64]
    n_units: int

    def unit(self, j: int) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        idx = unit_state_indices(j, self.n_units)
        rows = np.array([2 * j, 2 * j + 1])
        return (
            self.A_cl[np.ix_(idx, idx)],
            self.B_u[np.ix_(idx, rows)],
            self.C[np.ix_(rows, idx)],
        )


def build_linearized(spec: MicrogridSpec, point: OperatingPoint) -> LinearizedSystem:
    """Assemble the exact per-unit linearization at ``point``.

    The port input is the sign-inverted bus voltage, which makes
    ``B_u = Gamma^-1 C.T`` and pairs the port with the network's passive
    structure.  See the module docstring for the state ordering.
    """
    g = spec.gains
    bank = spec.inverters
    w0 = spec.omega0
    n = spec.n_inverters
    N = 13 * n
    A = np.zeros((N, N))
    B = np.zeros((N, 2 * n))
    B_u = np.zeros((N, 2 * n))
    C = np.zeros((2 * n, N))
    C_delta = np.zeros((n, N))
    K_hat = np.zeros((2 * n, N))
    B_chi = np.zeros((N, n))
    Vn = g.V_n
    vr = g.v_dc_ref

    for j in range(n):
        idx = unit_state_indices(j, n)
        rows2 = np.array([2 * j, 2 * j + 1])
        s, c = np.sin(point.delta[j]), np.cos(point.delta[j])
        jTe = Vn * np.array([s, -c])  # d/d(delta) of -(rotated reference)
        vdc = point.v_dc[j]
        m_st = point.m_dq[2 * j : 2 * j + 2]
        i_st = point.i_dq[2 * j : 2 * j + 2]
        iref = point.i_ref[2 * j : 2 * j + 2]
        cp, cI = g.c_p[j], g.c_I[j]
        lamP, lamI = g.lambda_P[j], g.lambda_I[j]
        nq = g.n_q[j]

        Ah = np.zeros((13, 13))   # scaled rows: Gamma @ xdot = Ah @ x + ...
        # zeta row
        Ah[1, 2] = 1.0
        # DC-link row
        Ah[2, 1] = -g.Lambda_I[j]
        Ah[2, 2] = -(bank.G_dc[j] + g.Lambda_P[j])
        Ah[2, 3:5] = -0.5 * m_st
        # filter current rows
        Ah[3:5, 2] = 0.5 * m_st
        Ah[3:5, 3:5] = dq_block(-bank.R_f[j], w0 * bank.L_f[j])
        Ah[3:5, 5:7] = -np.eye(2)
        # capacitor voltage rows
        Ah[5:7, 3:5] = np.eye(2)
        Ah[5:7, 5:7] = dq_block(-bank.G_s[j], w0 * bank.C_f[j])
        Ah[5:7, 7:9] = -np.eye(2)
        # output current rows
        Ah[7:9, 5:7] = np.eye(2)
        Ah[7:9, 7:9] = dq_block(-bank.R_c[j], w0 * bank.L_c[j])
        # outer integrator rows
        Ah[9:11, 0] = jTe
        Ah[9:11, 5:7] = np.eye(2)
        Ah[9:11, 7:9] = -nq * np.array([[0.0, 1.0], [0.0, 0.0]])
        # inner integrator rows
        Ah[11:13, 0] = cp * vdc * jTe
        Ah[11:13, 2] = -iref
        Ah[11:13, 3:5] = vr * np.eye(2)
        Ah[11:13, 5:7] = cp * vdc * np.eye(2)
        Ah[11:13, 7:9] = -cp * vdc * nq * np.array([[0.0, 1.0], [0.0, 0.0]])
        Ah[11:13, 9:11] = cI * vdc * np.eye(2)

        gamma = np.array([
            1.0, 1.0, bank.C_dc[j],
            bank.L_f[j], bank.L_f[j], bank.C_f[j], bank.C_f[j],
            bank.L_c[j], bank.L_c[j], 1.0, 1.0, 1.0, 1.0,
        ])
        Aj = Ah / gamma[:, None]

        Bh = np.zeros((13, 2))
        Bh[2, :] = -0.5 * i_st
        Bh[3:5, :] = 0.5 * vdc * np.eye(2)
        Bj = Bh / gamma[:, None]

        Buh = np.zeros((13, 2))
        Buh[7:9, :] = np.eye(2)
        Buj = Buh / gamma[:, None]

        Kj = np.zeros((2, 13))
        Kj[:, 0] = lamP * cp * vdc * jTe
        Kj[:, 2] = -lamP * iref
        Kj[:, 3:5] = lamP * vr * np.eye(2)
        Kj[:, 5:7] = lamP * cp * vdc * np.eye(2)
        Kj[:, 7:9] = -lamP * cp * vdc * nq * np.array([[0.0, 1.0], [0.0, 0.0]])
        Kj[:, 9:11] = lamP * cI * vdc * np.eye(2)
        Kj[:, 11:13] = lamI * np.eye(2)

        A[np.ix_(idx, idx)] = Aj
        B[np.ix_(idx, rows2)] = Bj
        B_u[np.ix_(idx, rows2)] = Buj
        C[2 * j, idx[7]] = 1.0
        C[2 * j + 1, idx[8]] = 1.0
        C_delta[j, idx[0]] = 1.0
        K_hat[np.ix_(rows2, idx)] = Kj
        B_chi[idx[0], j] = 1.0

    kp_eT = np.zeros((n, 2 * n))
    for j in range(n):
        kp_eT[j, 2 * j] = g.k_p[j]
    A_cl = (
        A
        - C_delta.T @ kp_eT @ C
        - C_delta.T @ np.diag(g.k_I) @ C_delta
        - B @ K_hat
    )
    return LinearizedSystem(
        A=A, B=B, B_u=B_u, C=C, C_delta=C_delta,
        D_u=np.zeros((2 * n, 2 * n)), K_hat=K_hat, A_cl=A_cl,
        B_chi=B_chi, n_units=n,
    )


def transfer_function(
    A: NDArray[np.float64],
    B: NDArray[np.float64],
    C: NDArray[np.float64],
    D: NDArray[np.float64],
    omega: float,
) -> NDArray[np.complex128]:
    """Evaluate ``C (jw I - A)^-1 B + D`` at one frequency (rad/s)."""
    N = A.shape[0]
    X = np.linalg.solve(1j * omega * np.eye(N) - A, B)
    return C @ X + D


def inverter_field(spec: MicrogridSpec, v_b_port: NDArray[np.float64], chi: NDArray[np.float64]):
    """Nonlinear inverter+controller field with frozen bus voltage and chi.

    Returns ``f(z) -> dz`` over the 13n-entry block in the same per-quantity
    stacking as the linearization; this is the field whose Jacobian at the
    operating point the analytic ``A_cl``/``B_u`` must reproduce.
    """
    g = spec.gains
    bank = spec.inverters
    n = spec.n_inverters
    w0 = spec.omega0

    def f(z: NDArray[np.float64]) -> NDArray[np.float64]:
        delta = z[0:n]
        zeta = z[n : 2 * n]
        v_dc = z[2 * n : 3 * n]
        i_dq = z[3 * n : 5 * n]
        v_o = z[5 * n : 7 * n]
        i_o = z[7 * n : 9 * n]
        beta = z[9 * n : 11 * n]
        xi = z[11 * n : 13 * n]

        omega = frequency_law(g, delta, i_o, chi, w0)
        i_dc, dzeta = dc_law(g, v_dc, zeta)
        m_dq, dbeta, dxi, _, _ = ac_voltage_law(g, delta, v_dc, i_dq, v_o, i_o, beta, xi)
        dv_dc, di_dq, dv_o, di_o = electrical_derivatives(
            bank, v_dc, i_dq, v_o, i_o, m_dq, i_dc, v_b_port, w0
        )
        return np.concatenate([
            omega - w0, dzeta, dv_dc, di_dq, dv_o, di_o, dbeta, dxi,
        ])

    return f
