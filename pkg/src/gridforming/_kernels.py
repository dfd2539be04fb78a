"""Compiled inner loop for the time-domain simulator.

The reference dynamics live in :func:`gridforming.system.closed_loop_rhs` as
plain numpy; this module flattens one configuration of the closed loop into
primitive arrays and evaluates the identical equations inside numba-compiled
kernels (same state layout, same sign conventions, no fastmath).  A test pins
the two paths together to float round-off; the kernels exist purely to make
multi-second runs at microsecond steps affordable, never to redefine the
model.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .system import Configuration, MicrogridSpec, StateLayout, comm_laplacian

__all__ = ["kernel_args", "compiled_field", "rk4_run"]

# inv_par row order
_R_F, _L_F, _C_F, _G_S, _R_C, _L_C, _C_DC, _G_DC = range(8)
# gain_par row order
_K_P, _K_I, _N_Q, _C_P, _C_I, _LAM_P, _LAM_I, _LAMBDA_P, _LAMBDA_I, _I_MAX = range(10)


def kernel_args(spec: MicrogridSpec, config: Configuration):
    """Flatten one configuration into ``(active_spec, layout, args)``.

    ``args`` is the positional tail every kernel takes after the state
    vector(s); it contains only primitive scalars and contiguous arrays so
    numba compiles one specialization for all scenarios.
    """
    sub = spec.restricted(config.online) if not config.online.all() else spec
    g = sub.network.graph
    n, nb, ne = sub.n_inverters, g.bus_count, g.edge_count
    layout = StateLayout(n, nb, ne)

    bank, gains, net = sub.inverters, sub.gains, sub.network
    inv_par = np.ascontiguousarray(np.vstack([
        bank.R_f, bank.L_f, bank.C_f, bank.G_s,
        bank.R_c, bank.L_c, bank.C_dc, bank.G_dc,
    ]))
    gain_par = np.ascontiguousarray(np.vstack([
        gains.k_p, gains.k_I, gains.n_q, gains.c_p, gains.c_I,
        gains.lambda_P, gains.lambda_I, gains.Lambda_P, gains.Lambda_I,
        gains.i_max,
    ]))
    edges = np.asarray(g.edges, dtype=np.int64).reshape(ne, 2)
    args = (
        np.int64(n), np.int64(nb), np.int64(ne),
        inv_par, gain_par,
        float(gains.v_dc_ref), float(gains.V_n),
        bool(config.secondary_on), float(sub.secondary_alpha),
        np.ascontiguousarray(comm_laplacian(sub)),
        np.ascontiguousarray(sub.inverter_bus.astype(np.int64)),
        np.ascontiguousarray(edges[:, 0].copy()),
        np.ascontiguousarray(edges[:, 1].copy()),
        np.ascontiguousarray(net.line_R), np.ascontiguousarray(net.line_L),
        np.ascontiguousarray(net.shunt_C), np.ascontiguousarray(net.shunt_G),
        np.ascontiguousarray(net.load_R), np.ascontiguousarray(net.load_L),
        np.ascontiguousarray(config.cpl_P.astype(float)),
        np.ascontiguousarray(config.cpl_Q.astype(float)),
        float(sub.cpl_floor_frac * gains.V_n), float(sub.cpl_tau),
        float(sub.omega0),
    )
    return sub, layout, args


def compiled_field(spec: MicrogridSpec, config: Configuration):
    """Drop-in counterpart of :func:`closed_loop_rhs` backed by the kernel."""
    sub, layout, args = kernel_args(spec, config)

    def f(x: NDArray[np.float64]) -> NDArray[np.float64]:
        dx = np.empty(layout.size)
        _rhs(dx, np.ascontiguousarray(np.asarray(x, dtype=float)), *args)
        return dx

    return sub, layout, f


@njit(cache=True)
def _rhs(dx, x, n, nb, ne, inv_par, gain_par, v_dc_ref, V_n,
         sec_on, alpha, L_comm, inv_bus, edge_a, edge_b,
         line_R, line_L, shunt_C, shunt_G, load_R, load_L,
         cpl_P, cpl_Q, v_floor, cpl_tau, omega0):
    o_delta = 0
    o_zeta = n
    o_vdc = 2 * n
    o_idq = 3 * n
    o_vo = 5 * n
    o_io = 7 * n
    o_beta = 9 * n
    o_xi = 11 * n
    o_chi = 13 * n
    o_vb = 14 * n
    o_il = o_vb + 2 * nb
    o_ild = o_il + 2 * ne
    o_icpl = o_ild + 2 * nb

    for j in range(n):
        delta = x[o_delta + j]
        zeta = x[o_zeta + j]
        vdc = x[o_vdc + j]
        iD = x[o_idq + 2 * j]
        iQ = x[o_idq + 2 * j + 1]
        voD = x[o_vo + 2 * j]
        voQ = x[o_vo + 2 * j + 1]
        ioD = x[o_io + 2 * j]
        ioQ = x[o_io + 2 * j + 1]
        bD = x[o_beta + 2 * j]
        bQ = x[o_beta + 2 * j + 1]
        xD = x[o_xi + 2 * j]
        xQ = x[o_xi + 2 * j + 1]
        chi = x[o_chi + j]

        # angle droop
        dx[o_delta + j] = -gain_par[_K_P, j] * ioD - gain_par[_K_I, j] * delta + chi

        # DC-link PI
        dx[o_zeta + j] = vdc - v_dc_ref
        i_dc = (-gain_par[_LAMBDA_P, j] * (vdc - v_dc_ref)
                - gain_par[_LAMBDA_I, j] * zeta)

        # outer voltage loop with current limit and anti-windup
        c = math.cos(delta)
        s = math.sin(delta)
        eoD = voD - V_n * c - gain_par[_N_Q, j] * ioQ
        eoQ = voQ - V_n * s
        irD = -gain_par[_C_P, j] * eoD - gain_par[_C_I, j] * bD
        irQ = -gain_par[_C_P, j] * eoQ - gain_par[_C_I, j] * bQ
        if math.hypot(irD, irQ) > gain_par[_I_MAX, j]:
            sc = gain_par[_I_MAX, j] / math.hypot(irD, irQ)
            irD *= sc
            irQ *= sc
            dx[o_beta + 2 * j] = 0.0
            dx[o_beta + 2 * j + 1] = 0.0
        else:
            dx[o_beta + 2 * j] = eoD
            dx[o_beta + 2 * j + 1] = eoQ

        # inner current loop
        eiD = iD * v_dc_ref - irD * vdc
        eiQ = iQ * v_dc_ref - irQ * vdc
        dx[o_xi + 2 * j] = eiD
        dx[o_xi + 2 * j + 1] = eiQ
        mD = -gain_par[_LAM_P, j] * eiD - gain_par[_LAM_I, j] * xD
        mQ = -gain_par[_LAM_P, j] * eiQ - gain_par[_LAM_I, j] * xQ

        # power stage
        b = inv_bus[j]
        vbD = x[o_vb + 2 * b]
        vbQ = x[o_vb + 2 * b + 1]
        dx[o_vdc + j] = (-inv_par[_G_DC, j] * vdc + i_dc
                         - 0.5 * (iD * mD + iQ * mQ)) / inv_par[_C_DC, j]
        Lf = inv_par[_L_F, j]
        dx[o_idq + 2 * j] = (-inv_par[_R_F, j] * iD + omega0 * Lf * iQ
                             + 0.5 * vdc * mD - voD) / Lf
        dx[o_idq + 2 * j + 1] = (-inv_par[_R_F, j] * iQ - omega0 * Lf * iD
                                 + 0.5 * vdc * mQ - voQ) / Lf
        Cf = inv_par[_C_F, j]
        dx[o_vo + 2 * j] = (-inv_par[_G_S, j] * voD + omega0 * Cf * voQ
                            + iD - ioD) / Cf
        dx[o_vo + 2 * j + 1] = (-inv_par[_G_S, j] * voQ - omega0 * Cf * voD
                                + iQ - ioQ) / Cf
        Lc = inv_par[_L_C, j]
        dx[o_io + 2 * j] = (-inv_par[_R_C, j] * ioD + omega0 * Lc * ioQ
                            + voD - vbD) / Lc
        dx[o_io + 2 * j + 1] = (-inv_par[_R_C, j] * ioQ - omega0 * Lc * ioD
                                + voQ - vbQ) / Lc

    # secondary consensus
    if sec_on:
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += L_comm[j, k] * (x[o_chi + k]
                                       - gain_par[_K_I, k] * x[o_delta + k])
            dx[o_chi + j] = -alpha * acc
    else:
        for j in range(n):
            dx[o_chi + j] = 0.0

    # bus voltages (injections accumulated below), RL loads, CP-load lag
    for b in range(nb):
        vbD = x[o_vb + 2 * b]
        vbQ = x[o_vb + 2 * b + 1]
        ildD = x[o_ild + 2 * b]
        ildQ = x[o_ild + 2 * b + 1]
        icD = x[o_icpl + 2 * b]
        icQ = x[o_icpl + 2 * b + 1]
        dx[o_vb + 2 * b] = (-shunt_G[b] * vbD + omega0 * shunt_C[b] * vbQ
                            - ildD - icD)
        dx[o_vb + 2 * b + 1] = (-shunt_G[b] * vbQ - omega0 * shunt_C[b] * vbD
                                - ildQ - icQ)
        Ld = load_L[b]
        dx[o_ild + 2 * b] = (-load_R[b] * ildD + omega0 * Ld * ildQ + vbD) / Ld
        dx[o_ild + 2 * b + 1] = (-load_R[b] * ildQ - omega0 * Ld * ildD + vbQ) / Ld
        v2 = vbD * vbD + vbQ * vbQ
        if v2 < v_floor * v_floor:
            v2 = v_floor * v_floor
        itD = (vbD * cpl_P[b] + vbQ * cpl_Q[b]) / v2
        itQ = (vbQ * cpl_P[b] - vbD * cpl_Q[b]) / v2
        dx[o_icpl + 2 * b] = (itD - icD) / cpl_tau
        dx[o_icpl + 2 * b + 1] = (itQ - icQ) / cpl_tau

    for j in range(n):
        b = inv_bus[j]
        dx[o_vb + 2 * b] += x[o_io + 2 * j]
        dx[o_vb + 2 * b + 1] += x[o_io + 2 * j + 1]

    for e in range(ne):
        a = edge_a[e]
        b = edge_b[e]
        ilD = x[o_il + 2 * e]
        ilQ = x[o_il + 2 * e + 1]
        Ll = line_L[e]
        dx[o_il + 2 * e] = (-line_R[e] * ilD + omega0 * Ll * ilQ
                            + x[o_vb + 2 * a] - x[o_vb + 2 * b]) / Ll
        dx[o_il + 2 * e + 1] = (-line_R[e] * ilQ - omega0 * Ll * ilD
                                + x[o_vb + 2 * a + 1] - x[o_vb + 2 * b + 1]) / Ll
        dx[o_vb + 2 * a] -= ilD
        dx[o_vb + 2 * a + 1] -= ilQ
        dx[o_vb + 2 * b] += ilD
        dx[o_vb + 2 * b + 1] += ilQ

    for b in range(nb):
        dx[o_vb + 2 * b] /= shunt_C[b]
        dx[o_vb + 2 * b + 1] /= shunt_C[b]


@njit(cache=True)
def _rk4(x, h, n_steps, rec_stride, out, n, nb, ne, inv_par, gain_par,
         v_dc_ref, V_n, sec_on, alpha, L_comm, inv_bus, edge_a, edge_b,
         line_R, line_L, shunt_C, shunt_G, load_R, load_L,
         cpl_P, cpl_Q, v_floor, cpl_tau, omega0):
    """Fixed-step RK4; records every ``rec_stride``-th state into ``out``.

    Returns the number of records written.  Stops early (without touching
    ``x`` further) if a recorded sample is non-finite, so the caller can
    report the last valid time and the diverging channel.
    """
    N = x.size
    k1 = np.empty(N)
    k2 = np.empty(N)
    k3 = np.empty(N)
    k4 = np.empty(N)
    xt = np.empty(N)
    rec = 0
    for s in range(n_steps):
        _rhs(k1, x, n, nb, ne, inv_par, gain_par, v_dc_ref, V_n, sec_on,
             alpha, L_comm, inv_bus, edge_a, edge_b, line_R, line_L,
             shunt_C, shunt_G, load_R, load_L, cpl_P, cpl_Q, v_floor,
             cpl_tau, omega0)
        for i in range(N):
            xt[i] = x[i] + 0.5 * h * k1[i]
        _rhs(k2, xt, n, nb, ne, inv_par, gain_par, v_dc_ref, V_n, sec_on,
             alpha, L_comm, inv_bus, edge_a, edge_b, line_R, line_L,
             shunt_C, shunt_G, load_R, load_L, cpl_P, cpl_Q, v_floor,
             cpl_tau, omega0)
        for i in range(N):
            xt[i] = x[i] + 0.5 * h * k2[i]
        _rhs(k3, xt, n, nb, ne, inv_par, gain_par, v_dc_ref, V_n, sec_on,
             alpha, L_comm, inv_bus, edge_a, edge_b, line_R, line_L,
             shunt_C, shunt_G, load_R, load_L, cpl_P, cpl_Q, v_floor,
             cpl_tau, omega0)
        for i in range(N):
            xt[i] = x[i] + h * k3[i]
        _rhs(k4, xt, n, nb, ne, inv_par, gain_par, v_dc_ref, V_n, sec_on,
             alpha, L_comm, inv_bus, edge_a, edge_b, line_R, line_L,
             shunt_C, shunt_G, load_R, load_L, cpl_P, cpl_Q, v_floor,
             cpl_tau, omega0)
        for i in range(N):
            x[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if (s + 1) % rec_stride == 0:
            ok = True
            for i in range(N):
                out[rec, i] = x[i]
                if not np.isfinite(x[i]):
                    ok = False
            rec += 1
            if not ok:
                return rec
    return rec


def rk4_run(x0: NDArray[np.float64], h: float, n_steps: int, rec_stride: int,
            args) -> tuple[NDArray[np.float64], NDArray[np.float64], int]:
    """Integrate ``n_steps`` RK4 steps from ``x0`` with kernel ``args``.

    Returns ``(x_final, records, n_recorded)`` where ``records`` has one row
    per completed ``rec_stride`` block (row count may be short of the
    requested number if the state went non-finite).
    """
    x = np.ascontiguousarray(np.asarray(x0, dtype=float)).copy()
    n_rec = n_steps // rec_stride
    out = np.empty((n_rec, x.size))
    wrote = int(_rk4(x, float(h), int(n_steps), int(rec_stride), out, *args))
    return x, out, wrote
