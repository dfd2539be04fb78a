"""Bus/line/load circuit: graph algebra, DQ blocks, the phasor reduction,
and the physical dissipation inequality."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridforming import network as net
from gridforming.scenario import random_benchmark_spec

from helpers import exact_lti_step


def ring(n):
    return net.MicrogridGraph(n, [(j, (j + 1) % n) for j in range(n)])


# ---------------------------------------------------------------- topology

def test_two_bus_incidence():
    g = net.MicrogridGraph(2, [(0, 1)])
    assert np.array_equal(net.incidence_matrix(g), [[1.0], [-1.0]])


def test_ring_incidence_columns_sum_to_zero():
    b = net.incidence_matrix(ring(5))
    assert b.shape == (5, 5)
    assert np.array_equal(b.sum(axis=0), np.zeros(5))
    assert np.all(np.count_nonzero(b, axis=0) == 2)


def test_graph_rejects_self_loop():
    with pytest.raises(ValueError):
        net.MicrogridGraph(3, [(0, 1), (2, 2)])


def test_graph_rejects_out_of_range_bus():
    with pytest.raises(ValueError):
        net.MicrogridGraph(2, [(0, 5)])


def test_laplacian_of_ring():
    lap = net.laplacian(ring(4))
    assert np.array_equal(lap, net.incidence_matrix(ring(4)) @ net.incidence_matrix(ring(4)).T)
    assert np.array_equal(np.diag(lap), np.full(4, 2.0))
    assert np.allclose(lap.sum(axis=1), 0.0)
    eigs = np.sort(np.linalg.eigvalsh(lap))
    assert eigs[0] == pytest.approx(0.0, abs=1e-12)
    assert eigs[1] == pytest.approx(2.0, abs=1e-9)  # ring-of-4 algebraic connectivity


# ---------------------------------------------------------------- DQ blocks

def test_dq_block_structure():
    blk = net.dq_block(3.0, 4.0)
    assert np.array_equal(blk, [[3.0, 4.0], [-4.0, 3.0]])


@settings(deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3),
       st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_dq_block_multiplication_is_complex_multiplication(a, b, c, d):
    # a*I + b*J embeds the complex number a + jb as an algebra homomorphism.
    lhs = net.dq_block(a, b) @ net.dq_block(c, d)
    z = (a + 1j * b) * (c + 1j * d)
    assert np.allclose(lhs, net.dq_block(z.real, z.imag), atol=1e-6, rtol=1e-12)


def test_dq_diag_and_inverse_round_trip():
    a = np.array([1.0, -2.0, 0.5])
    b = np.array([0.3, 1.5, -4.0])
    m = net.dq_diag(a, b)
    m_inv = net.dq_diag_inverse(a, b)
    assert m.shape == (6, 6)
    assert np.allclose(m @ m_inv, np.eye(6), atol=1e-14)


def test_dq_diag_inverse_rejects_zero_block():
    with pytest.raises(np.linalg.LinAlgError, match="singular 2x2 DQ block"):
        net.dq_diag_inverse(np.array([1.0, 0.0]), np.array([0.5, 0.0]))


def test_incidence_dq_lifts_pairs():
    g = net.MicrogridGraph(2, [(0, 1)])
    assert np.array_equal(net.incidence_dq(g), np.kron([[1.0], [-1.0]], np.eye(2)))


# ---------------------------------------------------------------- dynamics

def small_params():
    g = net.MicrogridGraph(2, [(0, 1)])
    return net.NetworkParams(
        graph=g,
        line_R=np.array([0.2]),
        line_L=np.array([2e-3]),
        shunt_C=np.full(2, 1e-6),
        shunt_G=np.full(2, 1e-3),
        load_R=np.array([10.0, 20.0]),
        load_L=np.array([5e-3, 8e-3]),
    )


def test_zero_state_zero_input_stays_at_rest():
    p = small_params()
    dv, dil, dild = net.network_derivatives(
        p, np.zeros(4), np.zeros(2), np.zeros(4), np.zeros(4), 2 * np.pi * 50
    )
    assert np.array_equal(dv, np.zeros(4))
    assert np.array_equal(dil, np.zeros(2))
    assert np.array_equal(dild, np.zeros(4))


def test_load_current_relaxes_toward_bus_voltage():
    # With the bus held positive and no frame coupling considered on the D
    # axis at t = 0, the series-load current must start increasing.
    p = small_params()
    v_b = np.array([10.0, 0.0, 0.0, 0.0])
    _, _, dild = net.network_derivatives(
        p, v_b, np.zeros(2), np.zeros(4), np.zeros(4), 2 * np.pi * 50
    )
    assert dild[0] == pytest.approx(10.0 / p.load_L[0])
    assert dild[1:] == pytest.approx(np.zeros(3))


def test_state_matrices_agree_with_derivatives():
    p = small_params()
    omega0 = 2 * np.pi * 50
    a, b = net.network_state_matrices(p, omega0)
    rng = np.random.default_rng(0)
    x = rng.normal(size=a.shape[0])
    u = rng.normal(size=4)
    v_b, i_line, i_load = x[:4], x[4:6], x[6:]
    dv, dil, dild = net.network_derivatives(p, v_b, i_line, i_load, u, omega0)
    assert np.allclose(a @ x + b @ u, np.concatenate([dv, dil, dild]), atol=1e-10)


def test_network_params_validate_shapes_and_signs():
    g = net.MicrogridGraph(2, [(0, 1)])
    with pytest.raises(ValueError):
        net.NetworkParams(
            graph=g, line_R=np.array([0.2, 0.3]), line_L=np.array([2e-3]),
            shunt_C=np.full(2, 1e-6), shunt_G=np.full(2, 1e-3),
            load_R=np.array([10.0, 20.0]), load_L=np.array([5e-3, 8e-3]),
        )
    with pytest.raises(ValueError):
        net.NetworkParams(
            graph=g, line_R=np.array([-0.2]), line_L=np.array([2e-3]),
            shunt_C=np.full(2, 1e-6), shunt_G=np.full(2, 1e-3),
            load_R=np.array([10.0, 20.0]), load_L=np.array([5e-3, 8e-3]),
        )


# ---------------------------------------------------------------- reduction

def test_reduced_admittance_single_isolated_bus():
    # One bus, no lines: Y1 is shunt plus series-load admittance, a single
    # a*I + b*J block computable by hand in complex arithmetic.
    g = net.MicrogridGraph(1, [])
    omega0 = 2 * np.pi * 50
    p = net.NetworkParams(
        graph=g, line_R=np.zeros(0), line_L=np.zeros(0),
        shunt_C=np.array([2e-6]), shunt_G=np.array([3e-3]),
        load_R=np.array([12.0]), load_L=np.array([20e-3]),
    )
    y = net.reduced_bus_admittance(p, omega0)
    y_c = 3e-3 + 1j * omega0 * 2e-6 + 1.0 / (12.0 + 1j * omega0 * 20e-3)
    assert y[0, 0] == pytest.approx(y_c.real, rel=1e-12)
    assert y[1, 1] == pytest.approx(y_c.real, rel=1e-12)
    assert y[0, 1] == pytest.approx(-y_c.imag, rel=1e-12)
    assert y[1, 0] == pytest.approx(y_c.imag, rel=1e-12)


@pytest.mark.parametrize("seed", [0, 5])
def test_reduced_admittance_matches_static_lti_elimination(seed):
    # Independent oracle: the steady injection u that sustains bus voltage
    # v_b in the full dynamic network (x* = -A^-1 B u) must satisfy
    # Y1 v_b = u.  Two different eliminations of the same circuit.
    sp = random_benchmark_spec(seed)
    p = sp.network
    nb = p.graph.bus_count
    a, b = net.network_state_matrices(p, sp.omega0)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=2 * nb) * 10.0
    x_ss = -np.linalg.solve(a, b @ u)
    v_b = x_ss[: 2 * nb]
    y1 = net.reduced_bus_admittance(p, sp.omega0)
    assert np.max(np.abs(y1 @ v_b - u)) <= 1e-8 * np.max(np.abs(u))


# ---------------------------------------------------------------- passivity

@pytest.mark.parametrize("seed,n_inv", [(1, 2), (2, 5)])
def test_storage_never_exceeds_supplied_energy(seed, n_inv):
    """Physical dissipativity: along any trajectory of the R/L/C network the
    stored energy gain is bounded by the integral of injected power.  The
    supply integral is computed in closed form per step (piecewise-constant
    injections), so the bound carries no quadrature slack."""
    sp = random_benchmark_spec(seed, n_inverters=n_inv)
    p = sp.network
    nb = p.graph.bus_count
    a, b = net.network_state_matrices(p, sp.omega0)
    storage_diag = np.concatenate([
        np.repeat(p.shunt_C, 2), np.repeat(p.line_L, 2), np.repeat(p.load_L, 2)
    ])
    h = 1e-5
    ad, bd, s, q = exact_lti_step(a, b, h)
    rng = np.random.default_rng(seed)
    x = np.zeros(a.shape[0])
    u = rng.normal(size=2 * nb) * 5.0
    supply = 0.0
    v_max = 0.0
    worst = -np.inf
    for k in range(3000):
        if k % 500 == 0:
            u = rng.normal(size=2 * nb) * 5.0
        supply += u @ (s @ x + q @ u)[: 2 * nb]
        x = ad @ x + bd @ u
        v = 0.5 * x @ (storage_diag * x)
        v_max = max(v_max, v)
        worst = max(worst, v - supply)
    assert worst <= 1e-6 * max(v_max, 1.0)


def test_constant_power_current_matches_power_at_bus_voltage():
    v_b = np.array([310.0, -5.0])
    p_set, q_set = np.array([2500.0]), np.array([400.0])
    i = net.constant_power_current(v_b, p_set, q_set, v_floor=0.4 * 311.0)
    # P = vD iD + vQ iQ, Q = vQ iD - vD iQ at the bus.
    p_got = v_b[0] * i[0] + v_b[1] * i[1]
    q_got = v_b[1] * i[0] - v_b[0] * i[1]
    assert p_got == pytest.approx(2500.0, rel=1e-12)
    assert q_got == pytest.approx(400.0, rel=1e-12)


def test_constant_power_current_is_floored_at_low_voltage():
    # Below the floor the model limits the magnitude used in the division,
    # so the current stays bounded as the voltage collapses.
    floor = 0.4 * 311.0
    i_low = net.constant_power_current(
        np.array([1.0, 0.0]), np.array([2500.0]), np.array([0.0]), v_floor=floor
    )
    i_floor = net.constant_power_current(
        np.array([floor, 0.0]), np.array([2500.0]), np.array([0.0]), v_floor=floor
    )
    assert np.all(np.isfinite(i_low))
    assert np.abs(i_low[0]) <= np.abs(i_floor[0]) + 1e-9
