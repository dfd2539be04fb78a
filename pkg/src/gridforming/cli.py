"""Command-line front end.

Subcommands (each reads a scenario file, writes artifacts under ``--out`` and
prints a one-line status per certificate):

- ``simulate``   — integrate the scenario; trajectory CSV + summary YAML.
- ``equilibrium``— solve the steady state; equilibrium YAML.
- ``passivity``  — per-inverter port-passivity sweep; sweep CSV + certificates.
- ``certify``    — secondary-consensus convergence certificate.
- ``share``      — proportional power-sharing check on the terminal window of
  a fresh simulation of the scenario.

``--scenario`` accepts a path, the name of a bundled scenario
(``table1_5bus``, ``table2_2inv``, ``plugplay_3inv``) or the literal
``random`` (a benchmark-range draw controlled by ``--seed``).

Exit codes: 0 — success and every requested certificate passed; 1 — scenario
file invalid (the message names the offending field); 2 — an equilibrium or
integration did not converge; 3 — a certificate was evaluated and failed.
Outputs are deterministic: the same scenario and flags produce byte-identical
CSV files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from .certificates import Certificate
from .certify import consensus_spectrum, secondary_consensus_certificate
from .linearize import build_linearized, solve_equilibrium
from .passivity import certify_inverters
from .scenario import (
    ScenarioError,
    bundled_scenario_names,
    bundled_scenario_path,
    parse_scenario,
    random_benchmark_spec,
)
from .secondary import check_power_sharing
from .sim import Scenario, SimulationDiverged, simulate, steady_state_report

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NO_CONVERGE = 2
EXIT_CERT_FAILED = 3


def _plain(value):
    """Recursively convert numbers/arrays into YAML-safe builtins."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def _write_yaml(doc: dict, path: Path) -> None:
    path.write_text(yaml.safe_dump(_plain(doc), sort_keys=False))


def _certificate_doc(cert: Certificate) -> dict:
    details = {k: v for k, v in cert.details.items() if k != "sweep"}
    return {
        "name": cert.name,
        "passed": bool(cert.passed),
        "margin": None if cert.margin is None else float(cert.margin),
        "reason": cert.reason,
        "details": details,
    }


def _resolve(args) -> tuple:
    value = args.scenario
    if value == "random":
        spec = random_benchmark_spec(args.seed)
        scenario = Scenario(spec=spec, horizon=0.2, name=f"random-{args.seed}")
        return spec, scenario
    path = Path(value)
    if not path.exists():
        if value in bundled_scenario_names():
            path = bundled_scenario_path(value)
        else:
            raise ScenarioError(
                f"no such scenario file or bundled name: {value!r} "
                f"(bundled: {bundled_scenario_names()})"
            )
    return parse_scenario(path)


def _solved_equilibrium(spec, scenario):
    eq = solve_equilibrium(
        spec,
        secondary_on=scenario.secondary_on,
        online=scenario.online0,
        chi0=scenario.chi0,
    )
    if not eq.converged:
        raise RuntimeError(
            f"equilibrium solve did not converge (residual {eq.residual:.3e})"
        )
    return eq


def _final_window(scenario) -> float:
    return min(0.5, scenario.horizon / 2.0)


def _cmd_simulate(args, spec, scenario, out: Path) -> int:
    traj = simulate(scenario)
    csv_path = out / f"{scenario.name}_trajectory.csv"
    traj.to_csv(csv_path)
    report = steady_state_report(traj, window=_final_window(scenario))
    doc = {
        "scenario": scenario.name,
        "horizon": scenario.horizon,
        "events": len(scenario.events),
        "window": report.window,
        "angles_within_bounds": bool(traj.delta_within_bounds),
        "final_means": {k: v for k, v in report.means.items()},
        "max_abs_deviation": {k: v for k, v in report.max_dev.items()},
        "settled": {k: v for k, v in report.settled.items()},
    }
    yaml_path = out / f"{scenario.name}_summary.yaml"
    _write_yaml(doc, yaml_path)
    print(f"wrote {csv_path} and {yaml_path}")
    return EXIT_OK


def _cmd_equilibrium(args, spec, scenario, out: Path) -> int:
    eq = _solved_equilibrium(spec, scenario)
    u = eq.unpack()
    gains = eq.spec.gains
    v_b = u["v_b"].reshape(-1, 2)
    doc = {
        "scenario": scenario.name,
        "converged": bool(eq.converged),
        "residual": float(eq.residual),
        "secondary_on": bool(eq.secondary_on),
        "frequency": [float(w / (2.0 * np.pi)) for w in eq.omega],
        "delta": u["delta"],
        "v_dc": u["v_dc"],
        "i_o": u["i_o"].reshape(-1, 2),
        "v_o": u["v_o"].reshape(-1, 2),
        "chi": u["chi"],
        "weighted_currents": gains.k_p * u["i_o"][0::2],
        "bus_voltage_magnitude": np.hypot(v_b[:, 0], v_b[:, 1]),
    }
    path = out / f"{scenario.name}_equilibrium.yaml"
    _write_yaml(doc, path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_passivity(args, spec, scenario, out: Path) -> int:
    active = spec.restricted(scenario.online0)
    if args.operating_point == "equilibrium":
        eq = _solved_equilibrium(spec, scenario)
        lin = build_linearized(eq.spec, eq.point)
    else:
        lin = None
    certs = certify_inverters(
        active,
        lin=lin,
        omega_min=args.omega_min,
        omega_max=args.omega_max,
        points=args.sweep_points,
        keep_sweep=True,
    )
    sweeps = [c.details.get("sweep") for c in certs]
    if all(s is not None and s.omega.size for s in sweeps):
        table = np.column_stack([sweeps[0].omega] + [s.min_eig for s in sweeps])
        csv_path = out / f"{scenario.name}_passivity_sweep.csv"
        header = ",".join(["omega"] + [f"unit{j}" for j in range(len(sweeps))])
        np.savetxt(csv_path, table, fmt="%.10e", delimiter=",",
                   header=header, comments="")
        print(f"wrote {csv_path}")
    yaml_path = out / f"{scenario.name}_passivity.yaml"
    _write_yaml({"certificates": [_certificate_doc(c) for c in certs]}, yaml_path)
    for cert in certs:
        print(cert.summary())
    print(f"wrote {yaml_path}")
    return EXIT_OK if all(c.passed for c in certs) else EXIT_CERT_FAILED


def _cmd_certify(args, spec, scenario, out: Path) -> int:
    active = spec.restricted(scenario.online0)
    eq = _solved_equilibrium(spec, scenario)
    try:
        cert = secondary_consensus_certificate(active, eq)
    except ValueError as err:
        # Outside the certificate's hypothesis: report the reduced spectrum
        # on its own as informational.
        eigs = consensus_spectrum(active, eq)
        cert = Certificate(
            name="secondary-consensus",
            passed=False,
            details={"consensus_eigs": [complex(z) for z in np.sort_complex(eigs)]},
            reason=str(err),
        )
    path = out / f"{scenario.name}_certify.yaml"
    _write_yaml(_certificate_doc(cert), path)
    print(cert.summary())
    print(f"wrote {path}")
    return EXIT_OK if cert.passed else EXIT_CERT_FAILED


def _cmd_share(args, spec, scenario, out: Path) -> int:
    traj = simulate(scenario)
    window = traj.window(traj.t[-1] - _final_window(scenario))
    i_oD = traj.block("i_o")[window][:, 0::2]
    final_online = ~np.isnan(i_oD[-1])
    means = np.nanmean(i_oD[:, final_online], axis=0)
    cert = check_power_sharing(
        spec.gains.k_p[final_online], means, tol_rel=args.tol
    )
    cert.details["online_units"] = np.flatnonzero(final_online).tolist()
    cert.details["window"] = _final_window(scenario)
    path = out / f"{scenario.name}_share.yaml"
    _write_yaml(_certificate_doc(cert), path)
    print(cert.summary())
    print(f"wrote {path}")
    return EXIT_OK if cert.passed else EXIT_CERT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridforming",
        description="Simulate and certify inverter-based microgrids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": _cmd_simulate,
        "equilibrium": _cmd_equilibrium,
        "passivity": _cmd_passivity,
        "certify": _cmd_certify,
        "share": _cmd_share,
    }
    for name, func in commands.items():
        p = sub.add_parser(name)
        p.set_defaults(func=func)
        p.add_argument("--scenario", required=True,
                       help="scenario file path, bundled name, or 'random'")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for --scenario random")
        if name == "passivity":
            p.add_argument("--sweep-points", type=int, default=1000)
            p.add_argument("--omega-min", type=float, default=1e-2)
            p.add_argument("--omega-max", type=float, default=1e6)
            p.add_argument("--operating-point",
                           choices=("equilibrium", "nominal"),
                           default="equilibrium")
        if name == "share":
            p.add_argument("--tol", type=float, default=0.02,
                           help="relative pairwise sharing tolerance")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec, scenario = _resolve(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, spec, scenario, out)
    except ScenarioError as err:
        print(f"scenario error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationDiverged as err:
        print(f"simulation diverged: {err}", file=sys.stderr)
        return EXIT_NO_CONVERGE
    except RuntimeError as err:
        print(f"did not converge: {err}", file=sys.stderr)
        return EXIT_NO_CONVERGE


if __name__ == "__main__":
    sys.exit(main())
