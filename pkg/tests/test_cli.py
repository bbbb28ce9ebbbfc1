import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from viscodelay import cli, outputs, scenarios


@pytest.fixture
def quick_config(tmp_path):
    cfg = (scenarios.preset("no-delay-linear")
           .with_value("domain.n_modes", 4)
           .with_value("horizon", 1.0)
           .with_value("name", "quick"))
    path = tmp_path / "quick.yaml"
    scenarios.save_config(cfg, path)
    return str(path)


def _run(argv):
    return cli.main(argv)


def test_validate_ok(quick_config, tmp_path, capsys):
    assert _run(["validate", quick_config, "--out", str(tmp_path)]) == cli.EXIT_OK
    out = tmp_path / "quick"
    assert json.loads((out / "validation.json").read_text())["all_pass"] is True
    assert (out / "config.yaml").exists()
    assert "certificate" in capsys.readouterr().out


def test_validate_reports_hypothesis_failure(tmp_path):
    cfg = scenarios.load_config(_write_quick(tmp_path)).with_value(
        "kernel", [{"weight": 2.4, "rate": 2.0}])
    path = tmp_path / "bad.yaml"
    scenarios.save_config(cfg, path)
    assert _run(["validate", str(path), "--out", str(tmp_path)]) == cli.EXIT_HYPOTHESIS


def _write_quick(tmp_path):
    cfg = (scenarios.preset("no-delay-linear").with_value("domain.n_modes", 4)
           .with_value("horizon", 1.0).with_value("name", "quick"))
    path = tmp_path / "q.yaml"
    scenarios.save_config(cfg, path)
    return path


def test_missing_file_and_bad_preset(tmp_path):
    assert _run(["validate", str(tmp_path / "nope.yaml")]) == cli.EXIT_ERROR
    assert _run(["validate", "preset:nope", "--out", str(tmp_path)]) == cli.EXIT_ERROR


def test_certify_feasible_and_infeasible(quick_config, tmp_path):
    assert _run(["certify", quick_config, "--out", str(tmp_path)]) == cli.EXIT_OK
    data = json.loads((tmp_path / "quick" / "certificate.json").read_text())
    assert data["verdict"] == "certified"
    assert data["rho"] == "inf"
    cfg = scenarios.load_config(quick_config).with_value("gain.params.k0", 1.0)
    path = tmp_path / "hot.yaml"
    scenarios.save_config(cfg, path)
    assert _run(["certify", str(path), "--out", str(tmp_path)]) == cli.EXIT_INFEASIBLE


def test_run_writes_outputs(quick_config, tmp_path, capsys):
    assert _run(["run", quick_config, "--out", str(tmp_path)]) == cli.EXIT_OK
    out = tmp_path / "quick"
    for name in ("trajectory.csv", "energy.csv", "violations.csv", "energy_report.json",
                 "config.yaml", "manifest.json"):
        assert (out / name).exists(), name
    traj = outputs.read_csv(out / "trajectory.csv")
    assert set(traj) >= {"t", "u1", "u4", "v1", "v4"}
    assert traj["t"][-1] == pytest.approx(1.0)
    energy = outputs.read_csv(out / "energy.csv")
    assert np.all(np.diff(energy["calE"]) >= 0)
    report = json.loads((out / "energy_report.json").read_text())
    assert report["audits"]["gronwall"]["status"] == "pass"
    assert "status = ok" in capsys.readouterr().out


def test_run_audit_selection(quick_config, tmp_path):
    assert _run(["run", quick_config, "--out", str(tmp_path), "--audits", "gronwall",
                 "--horizon", "0.5"]) == cli.EXIT_OK
    report = json.loads((tmp_path / "quick" / "energy_report.json").read_text())
    assert report["audits"]["gronwall"]["status"] == "pass"
    assert "derivative" not in report["audits"] and "lower_bound" not in report["audits"]
    assert _run(["run", quick_config, "--audits", "bogus", "--out", str(tmp_path)]) == 1


def test_run_refuses_unsatisfied_hypotheses(tmp_path):
    cfg = scenarios.load_config(_write_quick(tmp_path)).with_value("delay.params.value", 3.0)
    path = tmp_path / "d.yaml"
    scenarios.save_config(cfg, path)
    assert _run(["run", str(path), "--out", str(tmp_path)]) == cli.EXIT_HYPOTHESIS


def test_run_reports_blowup(tmp_path):
    cfg = (scenarios.preset("destabilizing-gain").with_value("domain.n_modes", 3)
           .with_value("gain.params.k0", 20.0).with_value("history.amplitude", 30.0)
           .with_value("horizon", 20.0))
    path = tmp_path / "boom.yaml"
    scenarios.save_config(cfg, path)
    assert _run(["run", str(path), "--out", str(tmp_path), "--audits", "none"]) == \
        cli.EXIT_BLOWUP


def test_env_var_sets_output_root(quick_config, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "envroot"))
    assert _run(["validate", quick_config]) == cli.EXIT_OK
    assert (tmp_path / "envroot" / "quick" / "validation.json").exists()


def test_fit_recovers_rate(tmp_path, capsys):
    t = np.linspace(0, 10, 501)
    path = tmp_path / "e.csv"
    outputs.write_csv(path, ["t", "E"], [t, 2.0 * np.exp(-0.7 * t)])
    assert _run(["fit", str(path), "--out", str(tmp_path)]) == cli.EXIT_OK
    text = capsys.readouterr().out
    rate = float(text.split("rate = ")[1].split()[0])
    assert rate == pytest.approx(0.7, rel=1e-9)
    assert json.loads((tmp_path / "fit.json").read_text())["rate"] == pytest.approx(0.7)


def test_fit_rejects_missing_columns(tmp_path):
    path = tmp_path / "x.csv"
    outputs.write_csv(path, ["a"], [np.arange(3.0)])
    assert _run(["fit", str(path)]) == cli.EXIT_ERROR


def test_plot_is_valid_svg_with_two_panels(tmp_path):
    t = np.linspace(0, 5, 200)
    path = tmp_path / "energy.csv"
    outputs.write_csv(path, ["t", "E"], [t, np.exp(-t)])
    target = tmp_path / "e.svg"
    assert _run(["plot", str(path), "--output", str(target), "--title", "demo"]) == 0
    root = ET.parse(target).getroot()
    assert root.tag.endswith("svg")
    ids = [el.get("id", "") for el in root.iter()]
    assert sum(1 for i in ids if i.startswith("axes_")) == 2
    first = target.read_bytes()
    outputs.plot_energy_svg(target, t, np.exp(-t), "demo")
    assert target.read_bytes() == first


def test_sweep_rows_sorted_and_flip(quick_config, tmp_path, capsys):
    assert _run(["sweep", quick_config, "--param", "gain.params.k0", "--values",
                 "0.3,0.0,0.1", "--no-run", "--workers", "1", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "quick" / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["value"]) for r in rows] == [0.0, 0.1, 0.3]
    assert [r["verdict"] for r in rows] == ["certified", "certified", "infeasible"]


def test_sweep_with_runs_in_parallel(quick_config, tmp_path):
    rows = cli.run_sweep(scenarios.load_config(quick_config), "gain.params.k0",
                         [0.05, 0.0], horizon=0.5, workers=2)
    assert [r["value"] for r in rows] == [0.0, 0.05]
    assert all(r["status"] == "ok" and r["violations"] == 0 for r in rows)
    assert rows[0]["fitted_rate"] > 0


def test_sweep_rejects_bad_input(quick_config, tmp_path):
    assert _run(["sweep", quick_config, "--param", "gain.params.k0", "--values", "a,b",
                 "--out", str(tmp_path)]) == cli.EXIT_ERROR
    assert _run(["sweep", quick_config, "--param", "gain.nope", "--values", "1",
                 "--out", str(tmp_path)]) == cli.EXIT_ERROR
