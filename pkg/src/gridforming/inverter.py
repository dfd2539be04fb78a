"""Average model of a grid-forming inverter's power stage.

Each unit is a controllable DC current source feeding a DC-link capacitor, a
lossless switching stage described by its modulation signal, an RL filter
with a shunt capacitor, and an RL connector into the network bus.  The
switching stage couples the two sides through the power balance::

    i_x = (1/2) * i_DQ . m_DQ        (current drawn from the DC link)
    v_x = (1/2) * v_dc * m_DQ        (voltage applied to the filter)

All functions are vectorized over a bank of ``n`` inverters: scalar-per-unit
quantities have shape (n,), DQ quantities are interleaved with shape (2n,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "InverterParams",
    "InverterBank",
    "switch_current",
    "switch_voltage",
    "dq_power",
    "electrical_derivatives",
    "stack_inverter_states",
    "split_inverter_states",
]


@dataclass
class InverterParams:
    """Electrical parameters of one inverter (plain SI units)."""

    R_f: float = 0.1
    L_f: float = 5e-3
    C_f: float = 50e-6
    G_s: float = 3e-3
    R_c: float = 0.2
    L_c: float = 2e-3
    C_dc: float = 10e-3
    G_dc: float = 10e-3

    def __post_init__(self) -> None:
        for name in ("R_f", "L_f", "C_f", "G_s", "R_c", "L_c", "C_dc", "G_dc"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class InverterBank:
    """Parameter arrays for ``n`` inverters (one entry per unit)."""

    R_f: NDArray[np.float64]
    L_f: NDArray[np.float64]
    C_f: NDArray[np.float64]
    G_s: NDArray[np.float64]
    R_c: NDArray[np.float64]
    L_c: NDArray[np.float64]
    C_dc: NDArray[np.float64]
    G_dc: NDArray[np.float64]

    @classmethod
    def from_units(cls, units: list[InverterParams]) -> "InverterBank":
        fields = ("R_f", "L_f", "C_f", "G_s", "R_c", "L_c", "C_dc", "G_dc")
        return cls(**{f: np.array([getattr(u, f) for u in units], dtype=float) for f in fields})

    @property
    def count(self) -> int:
        return self.R_f.size

    def unit(self, j: int) -> InverterParams:
        return InverterParams(
            R_f=self.R_f[j], L_f=self.L_f[j], C_f=self.C_f[j], G_s=self.G_s[j],
            R_c=self.R_c[j], L_c=self.L_c[j], C_dc=self.C_dc[j], G_dc=self.G_dc[j],
        )


def _pair_dot(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-unit dot product of interleaved DQ vectors: (2n,) x (2n,) -> (n,)."""
    return x[0::2] * y[0::2] + x[1::2] * y[1::2]


def _rot90(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Apply blockdiag(J): (d, q) -> (q, -d)."""
    out = np.empty_like(x)
    out[0::2] = x[1::2]
    out[1::2] = -x[0::2]
    return out


def switch_current(i_dq: NDArray[np.float64], m_dq: NDArray[np.float64]) -> NDArray[np.float64]:
    """Current drawn from each DC link by the switching stage, shape (n,)."""
    return 0.5 * _pair_dot(i_dq, m_dq)


def switch_voltage(v_dc: NDArray[np.float64], m_dq: NDArray[np.float64]) -> NDArray[np.float64]:
    """Voltage the switching stage applies to each filter, shape (2n,)."""
    return 0.5 * np.repeat(v_dc, 2) * m_dq


def dq_power(v: NDArray[np.float64], i: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Active/reactive power per unit from interleaved DQ voltage and current.

    P = vD*iD + vQ*iQ and Q = vQ*iD - vD*iQ (DQ image of V * conj(I)).
    """
    P = v[0::2] * i[0::2] + v[1::2] * i[1::2]
    Q = v[1::2] * i[0::2] - v[0::2] * i[1::2]
    return P, Q


def electrical_derivatives(
    bank: InverterBank,
    v_dc: NDArray[np.float64],
    i_dq: NDArray[np.float64],
    v_o: NDArray[np.float64],
    i_o: NDArray[np.float64],
    m_dq: NDArray[np.float64],
    i_dc: NDArray[np.float64],
    v_bus: NDArray[np.float64],
    omega0: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Time derivatives (dv_dc, di_dq, dv_o, di_o) of the power-stage states.

    ``i_dc`` is the controlled DC-source current (n,), ``m_dq`` the modulation
    signal (2n,), and ``v_bus`` the bus voltage each unit is connected to
    (2n,).  The frame-coupling terms use the nominal frequency ``omega0``.
    """
    dv_dc = (-bank.G_dc * v_dc + i_dc - switch_current(i_dq, m_dq)) / bank.C_dc

    Lf2 = np.repeat(bank.L_f, 2)
    di_dq = (
        -np.repeat(bank.R_f, 2) * i_dq + omega0 * Lf2 * _rot90(i_dq)
        + switch_voltage(v_dc, m_dq) - v_o
    ) / Lf2

    Cf2 = np.repeat(bank.C_f, 2)
    dv_o = (
        -np.repeat(bank.G_s, 2) * v_o + omega0 * Cf2 * _rot90(v_o) + i_dq - i_o
    ) / Cf2

    Lc2 = np.repeat(bank.L_c, 2)
    di_o = (
        -np.repeat(bank.R_c, 2) * i_o + omega0 * Lc2 * _rot90(i_o) + v_o - v_bus
    ) / Lc2

    return dv_dc, di_dq, dv_o, di_o


def stack_inverter_states(
    delta: NDArray[np.float64],
    v_dc: NDArray[np.float64],
    i_dq: NDArray[np.float64],
    v_o: NDArray[np.float64],
    i_o: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Pack per-unit physical states into one vector, blockwise by quantity.

    Ordering is [delta (n) | v_dc (n) | i_DQ (2n) | v_o (2n) | i_o (2n)],
    length 9n, matching the layout the linearization uses for the
    electrical substate.
    """
    return np.concatenate([delta, v_dc, i_dq, v_o, i_o])


def split_inverter_states(x: NDArray[np.float64], n: int) -> tuple[
    NDArray[np.float64], NDArray[np.float64], NDArray[np.float64],
    NDArray[np.float64], NDArray[np.float64],
]:
    """Inverse of :func:`stack_inverter_states` for ``n`` units."""
    if x.size != 9 * n:
        raise ValueError(f"expected a 9n = {9 * n} vector, got length {x.size}")
    return (
        x[0:n],
        x[n : 2 * n],
        x[2 * n : 4 * n],
        x[4 * n : 6 * n],
        x[6 * n : 8 * n],
    )
