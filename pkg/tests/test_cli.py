"""Command-line front end: artifact writing, exit codes, determinism."""

import numpy as np
import pytest
import yaml

from gridforming.cli import main
from gridforming.scenario import (
    bundled_scenario_path,
    emit_scenario,
    random_benchmark_spec,
)
from gridforming.sim import Scenario


@pytest.fixture(scope="module")
def short_scenario_file(tmp_path_factory, table2):
    spec, scen0 = table2
    scen = Scenario(spec=spec, horizon=0.02, dt=5e-6, record_dt=1e-3,
                    secondary_on=scen0.secondary_on, chi0=scen0.chi0,
                    name="short2")
    path = tmp_path_factory.mktemp("scen") / "short2.yaml"
    path.write_text(emit_scenario(spec, scen))
    return path


def test_simulate_writes_deterministic_artifacts(short_scenario_file, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        rc = main(["simulate", "--scenario", str(short_scenario_file),
                   "--out", str(out)])
        assert rc == 0
    csv_a = out_a / "short2_trajectory.csv"
    summary = yaml.safe_load((out_a / "short2_summary.yaml").read_text())
    assert csv_a.is_file()
    assert summary["scenario"] == "short2"
    assert summary["angles_within_bounds"] is True
    assert summary["events"] == 0
    assert set(summary["final_means"]) >= {"frequency", "v_dc"}
    assert all(summary["settled"]["frequency"])
    # byte-identical across runs
    assert csv_a.read_bytes() == (out_b / "short2_trajectory.csv").read_bytes()


def test_equilibrium_command_reports_operating_point(tmp_path):
    rc = main(["equilibrium", "--scenario", "table2_2inv", "--out", str(tmp_path)])
    assert rc == 0
    doc = yaml.safe_load((tmp_path / "table2_2inv_equilibrium.yaml").read_text())
    assert doc["converged"] is True
    assert doc["residual"] < 1e-6
    assert np.allclose(doc["frequency"], 50.0, atol=1e-9)
    assert len(doc["delta"]) == 2
    assert np.allclose(doc["v_dc"], 1000.0, atol=1.0)
    assert len(doc["weighted_currents"]) == 2
    assert len(doc["bus_voltage_magnitude"]) == 2


def test_passivity_command_passes_on_reference(tmp_path):
    rc = main(["passivity", "--scenario", "table1_5bus", "--out", str(tmp_path),
               "--operating-point", "nominal", "--sweep-points", "400"])
    assert rc == 0
    sweep = (tmp_path / "table1_5bus_passivity_sweep.csv").read_text().splitlines()
    assert sweep[0] == "omega,unit0,unit1,unit2,unit3,unit4"
    assert len(sweep) == 1 + 400
    doc = yaml.safe_load((tmp_path / "table1_5bus_passivity.yaml").read_text())
    assert len(doc["certificates"]) == 5
    for cert in doc["certificates"]:
        assert cert["passed"] is True
        assert cert["margin"] > 0.0


def test_passivity_failure_exit_code(tmp_path):
    doc = yaml.safe_load(bundled_scenario_path("table1_5bus").read_text())
    doc["gains"]["k_I"] = 0.0
    doc["name"] = "no_integral"
    doc["outputs"] = {"prefix": "no_integral"}
    path = tmp_path / "no_integral.yaml"
    path.write_text(yaml.safe_dump(doc))
    rc = main(["passivity", "--scenario", str(path), "--out", str(tmp_path),
               "--operating-point", "nominal", "--sweep-points", "400"])
    assert rc == 3
    out = yaml.safe_load((tmp_path / "no_integral_passivity.yaml").read_text())
    assert all(c["passed"] is False for c in out["certificates"])
    assert all(c["margin"] < -2.0 for c in out["certificates"])


def test_certify_command_passes_on_reference(tmp_path):
    rc = main(["certify", "--scenario", "table2_2inv", "--out", str(tmp_path)])
    assert rc == 0
    doc = yaml.safe_load((tmp_path / "table2_2inv_certify.yaml").read_text())
    assert doc["name"] == "secondary-consensus"
    assert doc["passed"] is True
    assert doc["margin"] == pytest.approx(3.4748649585445754, rel=1e-6)
    assert doc["details"]["zero_eigenvalues"] == 1


def test_certify_outside_hypothesis_reports_spectrum(tmp_path):
    spec = random_benchmark_spec(0, uniform_tau=False)
    scen = Scenario(spec=spec, horizon=0.2, name="loose")
    path = tmp_path / "loose.yaml"
    path.write_text(emit_scenario(spec, scen))
    rc = main(["certify", "--scenario", str(path), "--out", str(tmp_path)])
    assert rc == 3
    doc = yaml.safe_load((tmp_path / "loose_certify.yaml").read_text())
    assert doc["passed"] is False
    assert "uniform ratio" in doc["reason"]
    assert len(doc["details"]["consensus_eigs"]) == spec.n_inverters


def test_share_command_passes_on_short_run(short_scenario_file, tmp_path):
    rc = main(["share", "--scenario", str(short_scenario_file),
               "--out", str(tmp_path)])
    assert rc == 0
    doc = yaml.safe_load((tmp_path / "short2_share.yaml").read_text())
    assert doc["name"] == "power-sharing"
    assert doc["passed"] is True
    assert doc["details"]["online_units"] == [0, 1]


def test_invalid_scenario_file_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema: [unclosed")
    assert main(["simulate", "--scenario", str(bad), "--out", str(tmp_path)]) == 1
    assert "scenario error" in capsys.readouterr().err


def test_unknown_bundled_name_exit_code(tmp_path, capsys):
    rc = main(["simulate", "--scenario", "nope", "--out", str(tmp_path)])
    assert rc == 1
    assert "table1_5bus" in capsys.readouterr().err


def test_divergent_run_exit_code(tmp_path, capsys):
    spec = random_benchmark_spec(3, n_inverters=2)
    scen = Scenario(spec=spec, horizon=0.01, dt=2e-5, record_dt=1e-4,
                    start="flat", name="fat_step")
    path = tmp_path / "fat_step.yaml"
    path.write_text(emit_scenario(spec, scen))
    rc = main(["simulate", "--scenario", str(path), "--out", str(tmp_path)])
    assert rc == 2
    assert "diverged" in capsys.readouterr().err


def test_random_scenario_resolution(tmp_path):
    rc = main(["equilibrium", "--scenario", "random", "--seed", "1",
               "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "random-1_equilibrium.yaml").is_file()
