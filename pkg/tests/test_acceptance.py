"""Acceptance suite: one test per acceptance criterion of the package, each
printing a single PASS/FAIL line with the measured margin.

Two clauses fail deliberately because the claims they test are measurably
false for this system; their failure messages carry the measured numbers:

- criterion 6's trajectory clause: the consensus-layer static reduction does
  not track the full nonlinear simulation within 10% of the perturbation
  size (measured 21%) — the reduction is a certification device, not a
  simulator;
- criterion 7's full-angle-box clause: the correction matrix M loses strict
  diagonal dominance for strongly positive angle draws (3 of 100
  counterexamples printed); dominance holds robustly on the droop-sag
  orthant, which is where every solved operating point of this package
  actually lives.
"""

import dataclasses

import numpy as np
import pytest

from gridforming.certify import (
    reduced_secondary_simulate,
    secondary_consensus_certificate,
)
from gridforming.linearize import solve_equilibrium
from gridforming.network import network_state_matrices
from gridforming.passivity import certify_inverters
from gridforming.scenario import random_benchmark_spec
from gridforming.secondary import check_power_sharing
from gridforming.sim import Scenario, simulate

from helpers import (
    closed_loop_fd_error,
    dominance_gaps,
    exact_lti_step,
    lemma_M,
)

# steady windows of the 5-second reference run: initial steady state, after
# the load increase at 1.5 s, after the load removal at 3.5 s
WINDOWS = [(1.0, 1.5), (3.0, 3.5), (4.5, 5.0)]


def _line(num: str, ok: bool, detail: str) -> None:
    print(f"criterion {num} {'PASS' if ok else 'FAIL'}: {detail}")


def test_criterion_01_closed_loop_matrix_matches_finite_differences(
    table1, table1_eq
):
    spec, _ = table1
    errors = [closed_loop_fd_error(spec, table1_eq)]
    for seed in range(20):
        sp = random_benchmark_spec(seed)
        eq = solve_equilibrium(sp)
        assert eq.converged, f"random draw {seed} did not converge"
        errors.append(closed_loop_fd_error(sp, eq))
    worst = max(errors)
    ok = worst < 1e-4
    _line("01", ok, f"worst entrywise relative error {worst:.2e} over the "
          f"reference network and 20 random draws (tolerance 1e-4)")
    assert ok


def test_criterion_02_every_inverter_port_strictly_passive(table1, table1_lin):
    spec, _ = table1
    certs = certify_inverters(spec, lin=table1_lin, points=1000)
    min_margin = min(c.margin for c in certs)
    ok_pass = all(c.passed for c in certs) and min_margin > 0.0

    gains = dataclasses.replace(spec.gains, k_I=np.zeros(5))
    broken = dataclasses.replace(spec, gains=gains)
    broken_certs = certify_inverters(broken, points=1000)
    ok_fail = not any(c.passed for c in broken_certs)

    ok = ok_pass and ok_fail
    _line("02", ok, f"min passivity margin {min_margin:.3e} > 0 for all 5 "
          f"inverters over omega in [1e-2, 1e6] (1000 points); with the "
          f"integral gain zeroed every margin is negative "
          f"(min {min(c.margin for c in broken_certs):.3f})")
    assert ok


def test_criterion_03_frequency_restores_after_each_load_step(table1_run):
    traj = table1_run
    worst = 0.0
    for a, b in WINDOWS:
        mean_f = traj.frequency[traj.window(a, b)].mean(axis=0)
        worst = max(worst, float(np.max(np.abs(mean_f - 50.0))))
    ok = worst < 0.01
    _line("03", ok, f"worst windowed mean frequency deviation {worst:.2e} Hz "
          f"across {len(WINDOWS)} steady windows (tolerance 0.01 Hz)")
    assert ok


def test_criterion_04_gain_weighted_currents_share_proportionally(
    table1, table1_run
):
    spec, _ = table1
    traj = table1_run
    worst = 0.0
    for a, b in WINDOWS:
        means = traj.block("i_o")[traj.window(a, b)][:, 0::2].mean(axis=0)
        cert = check_power_sharing(spec.gains.k_p, means, tol_rel=0.02)
        worst = max(worst, cert.details["worst_pairwise_mismatch"])
        assert cert.passed, f"sharing failed in window ({a}, {b})"

    # a 1:2 droop-gain pair must split current 2:1
    pair = random_benchmark_spec(0, n_inverters=2)
    pair.gains.k_p[:] = (0.03, 0.06)
    pair.gains.k_I[:] = pair.gains.k_p * 667.0
    eq = solve_equilibrium(pair)
    assert eq.converged
    i_oD = eq.unpack()["i_o"][0::2]
    ratio = i_oD[0] / i_oD[1]
    ok_ratio = abs(ratio - 2.0) <= 0.04
    ok = worst < 0.02 and ok_ratio
    _line("04", ok, f"worst pairwise mismatch of k_p*i_oD {worst:.2e} "
          f"(tolerance 0.02); 1:2 droop gains split current {ratio:.6f}:1 "
          f"(want 2:1 within 2%)")
    assert ok


def test_criterion_05_voltages_and_dc_bus_stay_in_band(table1, table1_run):
    spec, _ = table1
    traj = table1_run
    v_n = spec.gains.V_n
    lo, hi = np.inf, -np.inf
    worst_dc = 0.0
    for a, b in WINDOWS:
        mask = traj.window(a, b)
        mag = traj.voltage_magnitude[mask] / v_n
        lo, hi = min(lo, float(mag.min())), max(hi, float(mag.max()))
        worst_dc = max(worst_dc, float(np.max(np.abs(
            traj.block("v_dc")[mask] - spec.gains.v_dc_ref))))
    ok = 0.9 < lo and hi < 1.1 and worst_dc < 0.005 * spec.gains.v_dc_ref
    _line("05", ok, f"windowed |V_o|/V_n in [{lo:.5f}, {hi:.5f}] "
          f"(band 0.9..1.1); worst DC-bus deviation {worst_dc:.2e} V "
          f"(tolerance 5 V)")
    assert ok


def test_criterion_06_consensus_certificate_margin_and_spectrum(
    table1, table1_eq
):
    spec, _ = table1
    cert = secondary_consensus_certificate(spec, table1_eq)
    d = cert.details
    ok = (cert.passed and cert.margin > 0.0 and d["zero_eigenvalues"] == 1
          and d["sharp_spectrum_stable"])
    _line("06", ok, f"perturbation-bound margin {cert.margin:.4f} > 0; "
          f"reduced consensus spectrum has exactly one zero eigenvalue and "
          f"{len(d['consensus_eigs']) - 1} strictly stable ones")
    assert ok


def test_criterion_06_reduced_consensus_trajectory_matches_full_simulation(
    table1, table1_eq
):
    # perturb the consensus states at equilibrium and compare the certified
    # static reduction against the full nonlinear simulation
    spec, scen = table1
    rng = np.random.default_rng(7)
    pert = rng.normal(size=5) * 0.05
    pert -= pert.mean()

    x0 = table1_eq.x.copy()
    x0[table1_eq.layout.chi] += pert
    run = Scenario(spec=spec, horizon=0.25, dt=5e-6, record_dt=1e-4,
                   start="flat", secondary_on=scen.secondary_on,
                   name="chi-pert")
    traj = simulate(run, x0=x0)
    chi_full = traj.block("chi") - table1_eq.unpack()["chi"]

    scale = np.linalg.norm(pert)
    errors = {}
    for model in ("feedback-plus", "feedback-minus", "frozen-angle"):
        red = reduced_secondary_simulate(spec, table1_eq, pert, 0.25,
                                         model=model,
                                         samples=chi_full.shape[0])
        errors[model] = float(
            np.max(np.linalg.norm(red.chi - chi_full, axis=1)) / scale)

    err = errors["feedback-plus"]
    ok = err <= 0.10
    _line("06", ok, f"certified reduction tracks the full simulation to "
          f"{err:.4f} of the perturbation norm (bound 0.10); sign-flipped "
          f"feedback variant {errors['feedback-minus']:.4f}, frozen-angle "
          f"variant {errors['frozen-angle']:.4f}")
    assert ok, (
        f"the static consensus reduction does not reproduce the full "
        f"nonlinear trajectory within 10%: worst-in-time error is "
        f"{err:.1%} of the perturbation norm (sign-flipped feedback "
        f"variant {errors['feedback-minus']:.1%}; dropping the angle "
        f"feedback entirely gives {errors['frozen-angle']:.1%}).  The "
        f"reduction assumes the angle/electrical states settle instantly "
        f"on the consensus timescale; over the measured transient they do "
        f"not, so the reduction certifies convergence but is not a "
        f"trajectory-accurate simulator."
    )


def test_criterion_07_correction_matrix_dominant_at_operating_angles():
    # the droop always sags angles under load: every solved operating point
    # in this package has delta* <= 0, so that orthant is the reachable set
    rng = np.random.default_rng(7)
    worst = np.inf
    for seed in range(20):
        spec = random_benchmark_spec(seed)
        n = spec.n_inverters
        m0 = lemma_M(spec, np.zeros(n))
        assert np.max(np.abs(m0 - m0.T)) < 1e-12 * np.max(np.abs(m0))
        assert np.linalg.eigvalsh(m0)[0] > 0.0
        for _ in range(5):
            delta = -rng.uniform(0.0, 0.999, n) * (np.pi / 2)
            worst = min(worst, min(dominance_gaps(lemma_M(spec, delta))))
    ok = worst > 0.0
    _line("07", ok, f"100 draws with angles in (-pi/2, 0]: strict diagonal "
          f"dominance with positive diagonal, worst gap {worst:.4f}; M(0) "
          f"symmetric positive definite on all 20 benchmark draws")
    assert ok


def test_criterion_07_correction_matrix_dominant_on_full_angle_box():
    # the same claim over the full two-sided angle box
    rng = np.random.default_rng(7)
    failures = []
    worst = np.inf
    for seed in range(20):
        spec = random_benchmark_spec(seed)
        n = spec.n_inverters
        for _ in range(5):
            delta = rng.uniform(-1.0, 1.0, n) * 0.999 * (np.pi / 2)
            gaps = dominance_gaps(lemma_M(spec, delta))
            worst = min(worst, min(gaps))
            if min(gaps) <= 0.0:
                failures.append((seed, np.round(delta, 3).tolist(),
                                 np.round(gaps, 3).tolist()))
    ok = not failures
    _line("07", ok, f"100 draws with angles in (-pi/2, pi/2): "
          f"{len(failures)} draws break strict dominance, worst gap "
          f"{worst:.3f}")
    assert ok, (
        f"strict diagonal dominance of the correction matrix fails on the "
        f"two-sided angle box: {len(failures)} of 100 draws are "
        f"counterexamples (worst gap {worst:.3f}).  Failing draws "
        f"(benchmark seed, angles, row/column/diagonal gaps): {failures}.  "
        f"The failures all involve angles near +pi/2, where the "
        f"angle-to-current matrix F loses its positive diagonal; with "
        f"angles restricted to the droop-sag orthant (-pi/2, 0] the same "
        f"check passes 100/100 with worst gap +0.79 (see the companion "
        f"test), and every solved operating point of this package lies in "
        f"that orthant."
    )


def test_criterion_08_network_storage_never_exceeds_supplied_energy():
    worst_overall = -np.inf
    for seed, n in ((1, 2), (2, 5)):
        spec = random_benchmark_spec(seed, n_inverters=n)
        net = spec.network
        nb = net.graph.bus_count
        a, b = network_state_matrices(net, spec.omega0)
        storage_diag = np.concatenate([
            np.repeat(net.shunt_C, 2), np.repeat(net.line_L, 2),
            np.repeat(net.load_L, 2),
        ])
        h = 1e-5
        a_d, b_d, s_mat, q_mat = exact_lti_step(a, b, h)
        rng = np.random.default_rng(seed)
        x = np.zeros(a.shape[0])
        u = rng.normal(size=2 * nb) * 5.0
        supply = 0.0
        worst, v_max = -np.inf, 0.0
        for k in range(3000):
            if k % 500 == 0:
                u = rng.normal(size=2 * nb) * 5.0
            # exact integral of u . y over the step (y = bus voltages)
            x_int = s_mat @ x + q_mat @ u
            supply += u @ x_int[: 2 * nb]
            x = a_d @ x + b_d @ u
            v = 0.5 * x @ (storage_diag * x)
            v_max = max(v_max, v)
            worst = max(worst, v - supply)
        worst_overall = max(worst_overall, worst / max(v_max, 1.0))
    ok = worst_overall <= 1e-6
    _line("08", ok, f"max of stored-energy gain minus supplied energy is "
          f"{worst_overall:.2e} per unit of peak storage on random 2-bus "
          f"and 5-bus networks (tolerance 1e-6)")
    assert ok


def test_criterion_09_two_inverter_equilibrium_matches_published_row(
    table2_eq
):
    u = table2_eq.unpack()
    m_dq = table2_eq.point.m_dq

    # entries of the published operating point that are internally
    # consistent with each other (3 significant figures, 2% tolerance)
    published = [
        (u["delta"][0], -0.0231), (u["delta"][1], -0.0162),
        (u["i_dq"][0], 14.3), (u["i_dq"][2], 14.2),
        (u["v_o"][0], 310.0), (u["v_o"][2], 311.0),
        (u["v_o"][3], -5.04),
        (u["i_o"][0], 13.4), (u["i_o"][1], -7.83),
        (u["i_o"][2], 13.2), (u["i_o"][3], -7.39),
    ]
    worst = max(abs(got - want) / abs(want) for got, want in published)
    ok = worst < 0.02

    # the remaining published entries contradict the consistent ones (the
    # published Q-axis voltage of unit 1 equals neither V_n sin(delta_1) nor
    # the printed currents; the published duty ratios are half the value
    # that reproduces the printed DC bus and AC voltage).  The solved
    # equilibrium satisfies the circuit equations exactly; pin those values.
    derived = [
        (u["i_dq"][1], -2.977271), (u["i_dq"][3], -2.529633),
        (u["v_o"][1], -7.183461),
        (m_dq[0], 0.632855), (m_dq[1], 0.030414),
        (m_dq[2], 0.631555), (m_dq[3], 0.034061),
    ]
    worst_derived = max(abs(got - want) / abs(want) for got, want in derived)
    ok = ok and worst_derived < 1e-3
    _line("09", ok, f"11 consistent published entries reproduced to "
          f"{worst:.4f} relative (tolerance 0.02); 7 internally "
          f"inconsistent entries pinned to the exactly-solved values "
          f"(drift {worst_derived:.1e})")
    assert ok


def test_criterion_10_inverter_connects_without_retuning(plugplay):
    spec, scen = plugplay
    # the two initially online units are certified passive before the event,
    # all three after -- with the same per-unit tunings
    before = certify_inverters(spec.restricted(scen.online0))
    after = certify_inverters(spec)
    ok_passive = all(c.passed for c in before) and all(c.passed for c in after)

    traj = simulate(scen)
    assert traj.delta_within_bounds
    d = traj.block("delta")
    t_connect = scen.events[0].time
    assert np.isnan(d[traj.t < t_connect, 2]).all()
    post = traj.t > t_connect
    ok_bounded = bool(np.isfinite(traj.states[post]).all())

    mask = traj.window(traj.t[-1] - 0.5)
    mean_f = traj.frequency[mask].mean(axis=0)
    ok_freq = float(np.max(np.abs(mean_f - 50.0))) < 0.01
    means = traj.block("i_o")[mask][:, 0::2].mean(axis=0)
    share = check_power_sharing(spec.gains.k_p, means, tol_rel=0.02)
    mag = traj.voltage_magnitude[post] / spec.gains.V_n
    ok_band = 0.9 < float(np.nanmin(mag)) and float(np.nanmax(mag)) < 1.1

    ok = ok_passive and ok_bounded and ok_freq and share.passed and ok_band
    _line("10", ok, f"passivity margins positive for 2 units before and 3 "
          f"after connection; transient bounded; final-window frequency "
          f"within {float(np.max(np.abs(mean_f - 50.0))):.2e} Hz of "
          f"nominal; gain-weighted currents shared to "
          f"{share.details['worst_pairwise_mismatch']:.4f}")
    assert ok
