import json

import pytest

from homog_rd.cli import cli
from homog_rd.fieldio import read_field_binary
from homog_rd.pipeline import ConvergenceReport, run_convergence_study
from homog_rd.scenario import load_scenario


def test_validate_exit_codes(scenario_dir, capsys):
    assert cli(["validate", "--config", str(scenario_dir / "heat_1d.cfg")]) == 0
    assert cli(["validate", "--config", str(scenario_dir / "bad_centering.cfg")]) == 2
    assert "Fredholm condition violated" in capsys.readouterr().out


def test_usage_errors(scenario_dir, capsys):
    cfg = str(scenario_dir / "heat_1d.cfg")
    assert cli(["bogus"]) == 1
    assert cli(["validate"]) == 1
    assert cli(["validate", "--config", "/nonexistent.cfg"]) == 1
    assert cli(["validate", "--config", cfg, "--regime-override", "sub"]) == 1
    assert cli(["verify", "--config", cfg, "--threads", "0"]) == 1
    err = capsys.readouterr().err
    assert "regime is derived from k" in err


def test_bad_config_is_usage_error(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[scenario]\ndimension = 1\n")
    assert cli(["validate", "--config", str(p)]) == 1


def test_cell_writes_field(scenario_dir, tmp_path, capsys):
    out = tmp_path / "cell"
    assert cli(["cell", "--config", str(scenario_dir / "plap_1d.cfg"), "--xi", "1.0", "--r", "0.0",
                "--out", str(out)]) == 0
    assert "residual" in capsys.readouterr().out
    f = read_field_binary(out / "pi.bin")
    assert f.grid.n == 128
    assert (out / "pi.csv").is_file()


def test_potential_and_dns_outputs(scenario_dir, tmp_path):
    cfg = str(scenario_dir / "heat_1d.cfg")
    assert cli(["potential", "--config", cfg, "--r", "0.5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "R_r0.bin").is_file()
    assert cli(["dns", "--config", cfg, "--epsilon", "1/8", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "dns_eps0.125.csv").is_file() and (tmp_path / "monitors_eps0.125.csv").is_file()
    assert cli(["macro", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "macro.csv").is_file()
    assert cli(["effective", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "effective.tab").is_file()


def test_verify_writes_deterministic_reports(scenario_dir, tmp_path, capsys):
    cfg = str(scenario_dir / "heat_1d.cfg")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli(["verify", "--config", cfg, "--out", str(a)]) == 0
    assert cli(["verify", "--config", cfg, "--out", str(b), "--no-cache"]) == 0
    for name in ("report.json", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    timings = json.loads((a / "timings.json").read_text())
    assert "total" in timings
    rep = json.loads((a / "report.json").read_text())
    assert rep["schema"] == "homog_rd.report/1" and rep["passed"]
    capsys.readouterr()
    assert cli(["report", "--config", cfg, "--out", str(a)]) == 0
    assert "overall: PASS" in capsys.readouterr().out
    assert cli(["report", "--config", cfg, "--out", str(tmp_path / "none")]) == 1


def test_verify_refuses_partial_table(tmp_path, scenario_dir, capsys):
    text = (scenario_dir / "heat_1d.cfg").read_text().replace("id = identity", "id = linear_cos")
    text += "\n[tol]\ncell = 1e-30\n"
    p = tmp_path / "partial.cfg"
    p.write_text(text)
    assert cli(["verify", "--config", str(p), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "partial" in err and "rerun" in err


def test_verify_bad_centering_fails_in_validate_stage(scenario_dir, tmp_path, capsys):
    assert cli(["verify", "--config", str(scenario_dir / "bad_centering.cfg"), "--out", str(tmp_path)]) == 2
    assert "stage 'validate'" in capsys.readouterr().err


def test_single_rung_ladder_has_no_monotonicity_assertion(scenario_dir):
    cfg = load_scenario(scenario_dir / "heat_1d.cfg")
    rep = run_convergence_study(cfg)
    assert len(rep.errors) == 1
    dec = next(c for c in rep.checks if c.name == "errors strictly decreasing")
    assert not dec.asserted and rep.passed
    back = ConvergenceReport.from_dict(json.loads(rep.to_json()))
    assert back.to_json() == rep.to_json()


def test_k_variants_decrease(scenario_dir):
    for name in ("linear_1d_k1.cfg", "linear_1d_k3.cfg"):
        cfg = load_scenario(scenario_dir / name)
        rep = run_convergence_study(cfg)
        assert rep.passed, (name, rep.to_text())
        assert all(b < a for a, b in zip(rep.errors, rep.errors[1:]))


@pytest.mark.parametrize("name", ["linear_2d.cfg"])
def test_two_dimensional_scenario(scenario_dir, name):
    rep = run_convergence_study(load_scenario(scenario_dir / name))
    assert rep.passed, rep.to_text()
