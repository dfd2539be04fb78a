"""Per-inverter control stack.

Three layers, all vectorized over a bank of ``n`` units:

* angle droop: each unit integrates its own frequency command
  ``omega = omega0 - k_p*i_oD - k_I*delta + chi``, which realizes
  proportional active-power sharing through the D-axis output current;
* DC-link PI: drives the DC source current so the link voltage tracks its
  reference exactly at steady state;
* cascaded AC control: an outer PI shapes the filter-capacitor voltage
  toward the droop-rotated reference (with a Q-current term softening the
  D-axis setpoint), an inner PI turns the resulting current reference into
  the modulation signal.  A norm limiter on the current reference protects
  the switches; the outer integrator freezes while the limiter is active.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "ControlGains",
    "frequency_law",
    "swing_form",
    "dc_law",
    "voltage_tracking_error",
    "current_limit",
    "ac_voltage_law",
]


@dataclass
class ControlGains:
    """Gain arrays for a bank of ``n`` inverters plus shared references.

    All per-unit entries are length-``n`` arrays; use
    :meth:`ControlGains.uniform` to broadcast scalars.
    """

    k_p: NDArray[np.float64]
    k_I: NDArray[np.float64]
    n_q: NDArray[np.float64]
    c_p: NDArray[np.float64]
    c_I: NDArray[np.float64]
    lambda_P: NDArray[np.float64]
    lambda_I: NDArray[np.float64]
    Lambda_P: NDArray[np.float64]
    Lambda_I: NDArray[np.float64]
    v_dc_ref: float = 1000.0
    V_n: float = 311.0
    i_max: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = np.asarray(self.k_p, dtype=float).size
        for name in ("k_p", "k_I", "n_q", "c_p", "c_I", "lambda_P", "lambda_I",
                     "Lambda_P", "Lambda_I"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.size == 1 and n > 1:
                arr = np.full(n, arr[0])
            if arr.shape != (n,):
                raise ValueError(f"{name} must have {n} entries, got shape {arr.shape}")
            setattr(self, name, arr)
        if self.i_max is None:
            self.i_max = np.full(n, np.inf)
        else:
            self.i_max = np.atleast_1d(np.asarray(self.i_max, dtype=float))
            if self.i_max.size == 1 and n > 1:
                self.i_max = np.full(n, self.i_max[0])
        if np.any(self.k_p <= 0.0):
            raise ValueError("k_p entries must be positive")

    @classmethod
    def uniform(
        cls,
        n: int,
        k_p: float = 0.06,
        k_I: float = 40.0,
        n_q: float = 0.078,
        c_p: float = 1.0,
        c_I: float = 10.0,
        lambda_P: float = 1e-3,
        lambda_I: float = 0.025,
        Lambda_P: float = 1.0,
        Lambda_I: float = 10.0,
        v_dc_ref: float = 1000.0,
        V_n: float = 311.0,
        i_max: float = np.inf,
    ) -> "ControlGains":
        full = lambda v: np.full(n, float(v))
        return cls(
            k_p=full(k_p), k_I=full(k_I), n_q=full(n_q), c_p=full(c_p), c_I=full(c_I),
            lambda_P=full(lambda_P), lambda_I=full(lambda_I),
            Lambda_P=full(Lambda_P), Lambda_I=full(Lambda_I),
            v_dc_ref=float(v_dc_ref), V_n=float(V_n), i_max=full(i_max),
        )

    @property
    def count(self) -> int:
        return self.k_p.size


def frequency_law(
    gains: ControlGains,
    delta: NDArray[np.float64],
    i_o: NDArray[np.float64],
    chi: NDArray[np.float64],
    omega0: float,
) -> NDArray[np.float64]:
    """Frequency command per unit: omega0 - k_p*i_oD - k_I*delta + chi."""
    return omega0 - gains.k_p * i_o[0::2] - gains.k_I * delta + chi


def swing_form(gains: ControlGains) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Equivalent swing-equation constants (M, D) = (1/k_p, k_I/k_p)."""
    return 1.0 / gains.k_p, gains.k_I / gains.k_p


def dc_law(
    gains: ControlGains,
    v_dc: NDArray[np.float64],
    zeta: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """DC-source PI: returns (i_dc command, zeta derivative).

    The integral action forces v_dc = v_dc_ref at every equilibrium.
    """
    err = v_dc - gains.v_dc_ref
    i_dc = -gains.Lambda_P * err - gains.Lambda_I * zeta
    return i_dc, err


def voltage_tracking_error(
    gains: ControlGains,
    delta: NDArray[np.float64],
    v_o: NDArray[np.float64],
    i_o: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Outer-loop error: v_o minus the rotated amplitude reference.

    The reference is V_n on each unit's own D axis, rotated by delta into the
    common frame; the n_q term shifts the D-axis target with the Q-axis
    output current so reactive load softens the voltage setpoint.
    """
    err = np.empty_like(v_o)
    err[0::2] = v_o[0::2] - gains.V_n * np.cos(delta) - gains.n_q * i_o[1::2]
    err[1::2] = v_o[1::2] - gains.V_n * np.sin(delta)
    return err


def current_limit(
    i_ref: NDArray[np.float64],
    i_max: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Scale each unit's DQ current reference onto the disc of radius i_max.

    Direction is preserved; references already inside the limit pass through
    untouched (bit-identical).  Returns the limited reference and a per-unit
    mask of units that are clamped.
    """
    norm = np.hypot(i_ref[0::2], i_ref[1::2])
    clamped = norm > i_max
    if not np.any(clamped):
        return i_ref, clamped
    scale = np.ones_like(norm)
    scale[clamped] = i_max[clamped] / norm[clamped]
    return i_ref * np.repeat(scale, 2), clamped


def ac_voltage_law(
    gains: ControlGains,
    delta: NDArray[np.float64],
    v_dc: NDArray[np.float64],
    i_dq: NDArray[np.float64],
    v_o: NDArray[np.float64],
    i_o: NDArray[np.float64],
    beta: NDArray[np.float64],
    xi: NDArray[np.float64],
) -> tuple[
    NDArray[np.float64], NDArray[np.float64], NDArray[np.float64],
    NDArray[np.float64], NDArray[np.bool_],
]:
    """Cascaded AC voltage/current PI stack.

    Returns ``(m_dq, dbeta, dxi, i_ref, clamped)``: the modulation signal,
    the outer and inner integrator derivatives, the (limited) filter-current
    reference, and the limiter mask.  While a unit is clamped its outer
    integrator ``beta`` is frozen so the voltage loop does not wind up
    against the current limit.
    """
    e_out = voltage_tracking_error(gains, delta, v_o, i_o)
    i_ref_raw = -np.repeat(gains.c_p, 2) * e_out - np.repeat(gains.c_I, 2) * beta
    i_ref, clamped = current_limit(i_ref_raw, gains.i_max)

    dbeta = e_out.copy()
    if np.any(clamped):
        dbeta[np.repeat(clamped, 2)] = 0.0

    e_in = i_dq * gains.v_dc_ref - i_ref * np.repeat(v_dc, 2)
    dxi = e_in
    m_dq = -np.repeat(gains.lambda_P, 2) * e_in - np.repeat(gains.lambda_I, 2) * xi
    return m_dq, dbeta, dxi, i_ref, clamped
