"""Per-unit electrical stage: switch algebra, derivative assembly, and the
published two-inverter operating point."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridforming.inverter import (
    InverterBank,
    InverterParams,
    dq_power,
    electrical_derivatives,
    split_inverter_states,
    stack_inverter_states,
    switch_current,
    switch_voltage,
)

OMEGA0 = 2.0 * np.pi * 50.0

FLOATS = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)

# Published two-inverter operating point (3 significant figures):
# per unit (i_dq, v_o, i_o) in the common frame.
TABLE_POINT = [
    (np.array([14.3, -3.18]), np.array([310.0, -3.55]), np.array([13.4, -7.83])),
    (np.array([14.2, -2.73]), np.array([311.0, -5.04]), np.array([13.2, -7.39])),
]


def bank2():
    return InverterBank.from_units([InverterParams()] * 2)


# ---------------------------------------------------------------- parameters

def test_params_reject_nonpositive_values():
    with pytest.raises(ValueError):
        InverterParams(L_f=0.0)
    with pytest.raises(ValueError):
        InverterParams(R_c=-0.1)


def test_bank_round_trips_units():
    units = [InverterParams(), InverterParams(R_f=0.5, L_c=4e-3)]
    bank = InverterBank.from_units(units)
    assert bank.count == 2
    got = bank.unit(1)
    assert got.R_f == 0.5
    assert got.L_c == 4e-3
    assert got.C_f == units[1].C_f


# ---------------------------------------------------------------- switch

@settings(deadline=None)
@given(FLOATS, FLOATS, FLOATS, FLOATS, st.floats(1.0, 2e3))
def test_switch_conserves_instantaneous_power(i_d, i_q, m_d, m_q, v_dc):
    """The averaged switch is lossless: DC-side power v_dc * i_sw equals
    AC-side power v_sw . i for every modulation and current."""
    i = np.array([i_d, i_q])
    m = np.array([m_d, m_q])
    i_sw = switch_current(i, m)
    v_sw = switch_voltage(np.array([v_dc]), m)
    dc_side = v_dc * i_sw[0]
    ac_side = float(v_sw @ i)
    assert dc_side == pytest.approx(ac_side, rel=1e-12, abs=1e-9)


def test_switch_values():
    i = np.array([10.0, -4.0])
    m = np.array([0.6, 0.1])
    assert switch_current(i, m)[0] == pytest.approx(0.5 * (6.0 - 0.4))
    assert np.allclose(switch_voltage(np.array([1000.0]), m), [300.0, 50.0])


def test_dq_power_convention():
    p, q = dq_power(np.array([310.0, -3.55]), np.array([13.4, -7.83]))
    assert p[0] == pytest.approx(310.0 * 13.4 + (-3.55) * (-7.83))
    assert q[0] == pytest.approx((-3.55) * 13.4 - 310.0 * (-7.83))


# ---------------------------------------------------------------- dynamics

def test_rest_state_stays_at_rest():
    bank = bank2()
    z2, z4 = np.zeros(2), np.zeros(4)
    dv_dc, di, dv_o, di_o = electrical_derivatives(
        bank, z2, z4, z4, z4, z4, z2, z4, OMEGA0
    )
    for arr in (dv_dc, di, dv_o, di_o):
        assert np.array_equal(arr, np.zeros_like(arr))


def test_derivatives_linear_in_states_for_fixed_modulation():
    bank = bank2()
    rng = np.random.default_rng(3)
    m = rng.normal(size=4) * 0.3

    def field(v_dc, i_dq, v_o, i_o, i_dc, v_bus):
        return np.concatenate(electrical_derivatives(
            bank, v_dc, i_dq, v_o, i_o, m, i_dc, v_bus, OMEGA0
        ))

    args1 = [rng.normal(size=s) for s in (2, 4, 4, 4, 2, 4)]
    args2 = [rng.normal(size=s) for s in (2, 4, 4, 4, 2, 4)]
    lhs = field(*(a + b for a, b in zip(args1, args2)))
    rhs = field(*args1) + field(*args2)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_capacitor_row_matches_hand_formula():
    """The filter-capacitor rows of the assembled derivative agree exactly
    with the nodal balance -G_s v_o + omega0 C_f J v_o + i - i_o."""
    bank = bank2()
    p = InverterParams()
    i_dq = np.concatenate([TABLE_POINT[0][0], TABLE_POINT[1][0]])
    v_o = np.concatenate([TABLE_POINT[0][1], TABLE_POINT[1][1]])
    i_o = np.concatenate([TABLE_POINT[0][2], TABLE_POINT[1][2]])
    _, _, dv_o, _ = electrical_derivatives(
        bank, np.full(2, 1000.0), i_dq, v_o, i_o,
        np.zeros(4), np.zeros(2), np.zeros(4), OMEGA0,
    )
    for j in range(2):
        vd, vq = v_o[2 * j], v_o[2 * j + 1]
        hand_d = -p.G_s * vd + OMEGA0 * p.C_f * vq + i_dq[2 * j] - i_o[2 * j]
        hand_q = -p.G_s * vq - OMEGA0 * p.C_f * vd + i_dq[2 * j + 1] - i_o[2 * j + 1]
        assert dv_o[2 * j] * p.C_f == pytest.approx(hand_d, abs=1e-12)
        assert dv_o[2 * j + 1] * p.C_f == pytest.approx(hand_q, abs=1e-12)


def test_published_point_capacitor_balance_defect_is_documented():
    """At the published 3-s.f. operating point the D-axis capacitor balance
    closes to within rounding (< 0.12 A), while the Q axis carries a
    consistent ~0.21 A defect on both units — the printed reactive currents
    are offset from the values the model's own algebra requires (the solved
    equilibrium reproduces every self-consistent entry; see the equilibrium
    tests).  This test pins the defect so a silent sign or scaling change in
    the capacitor row cannot masquerade as agreement."""
    p = InverterParams()
    for i_dq, v_o, i_o in TABLE_POINT:
        res_d = -p.G_s * v_o[0] + OMEGA0 * p.C_f * v_o[1] + i_dq[0] - i_o[0]
        res_q = -p.G_s * v_o[1] - OMEGA0 * p.C_f * v_o[0] + i_dq[1] - i_o[1]
        assert abs(res_d) < 0.12
        assert -0.30 < res_q < -0.12


# ---------------------------------------------------------------- stacking

def test_stack_split_round_trip():
    rng = np.random.default_rng(1)
    parts = [rng.normal(size=s) for s in (3, 3, 6, 6, 6)]
    x = stack_inverter_states(*parts)
    assert x.shape == (27,)
    back = split_inverter_states(x, 3)
    for a, b in zip(parts, back):
        assert np.array_equal(a, b)


def test_stack_layout_order():
    x = stack_inverter_states(
        np.array([1.0]), np.array([2.0]), np.array([3.0, 4.0]),
        np.array([5.0, 6.0]), np.array([7.0, 8.0]),
    )
    assert np.array_equal(x, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])


def test_split_rejects_wrong_length():
    with pytest.raises(ValueError):
        split_inverter_states(np.zeros(10), 2)
