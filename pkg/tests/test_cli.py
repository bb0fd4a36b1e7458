import json
import os
import subprocess
import sys

import pytest

from boundarywalk import cli, reporting
from boundarywalk.config import standard_config

SMALL = dict(
    grid={"y_max": 8.0, "t_max": 12.0, "ny": 256, "nt": 512},
    mc={"paths": 4000, "master_seed": 11, "batch": 1024},
    fluctuation={"epochs": 20000, "cap": 10**7},
    n_list=[16, 64, 256],
)


def write_config(tmp_path, name="cfg.json", **overrides):
    d = standard_config(**{**SMALL, **overrides})
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def run(args, lines=None):
    return cli.main(args, stdout=(lines.append if lines is not None else lambda s: None))


def test_solve_writes_fields(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    assert run(["solve", "--config", cfg, "--out", str(out)]) == 0
    prov, data = reporting.read_json(out / "solve.json")
    assert data["u00"] == pytest.approx(0.5390, abs=1e-3)
    assert prov["subcommand"] == "solve" and "u_hash" in prov
    assert any((out / "cache").iterdir())


def test_simulate_rows_and_diagnostics(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    assert run(["simulate", "--config", cfg, "--out", str(out), "--diagnostics"]) == 0
    prov, rows = reporting.read_csv(out / "simulate.csv")
    assert len(rows) == 3 and len(rows[0]) == len(cli.SIM_COLUMNS)
    assert prov["master_seed"] == 11
    _, diag = reporting.read_csv(out / "diagnostics.csv")
    assert {r["quantity"] for r in diag} == {"N_d", "growth"}


def test_expand_reuses_rho(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    assert run(["rho", "--config", cfg, "--out", str(out)]) == 0
    before = (out / "rho.json").read_bytes()
    assert run(["expand", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "rho.json").read_bytes() == before
    _, rows = reporting.read_csv(out / "expansion.csv")
    assert [r["n"] for r in rows] == ["16", "64", "256"]


def test_rates_and_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["rates", "--config", cfg, "--out", str(a)]) == 0
    assert run(["rates", "--config", cfg, "--out", str(b), "--threads", "2"]) == 0
    for name in ("rates.csv", "rates.json", "rho.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    _, rows = reporting.read_csv(a / "rates.csv")
    assert len(rows) == 3 and list(rows[0]) == list(cli.expansion.RATE_COLUMNS)


def test_rates_needs_three_n(tmp_path, capsys):
    cfg = write_config(tmp_path, n_list=[16, 64])
    assert run(["rates", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "n_list" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, grid={"ny": "lots"})
    assert run(["solve", "--config", cfg]) == 2
    assert "grid.ny" in capsys.readouterr().err


def test_lattice_law_exit_code(tmp_path, capsys):
    d = standard_config(**SMALL)
    d["problem"]["distribution"] = {"kind": "two-point"}
    p = tmp_path / "lat.json"
    p.write_text(json.dumps(d))
    for sub in ("validate", "expand"):
        assert run([sub, "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    assert "assumption 1" in capsys.readouterr().err


def test_numerical_refusal_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, fluctuation={"epochs": 20000, "cap": 3})
    assert run(["rho", "--config", cfg, "--out", str(tmp_path / "o")]) == 4
    assert "error:" in capsys.readouterr().err


def test_threads_must_be_positive(tmp_path):
    assert run(["solve", "--config", write_config(tmp_path), "--threads", "0"]) == 2


def test_output_directory_precedence(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, outputs={"directory": str(tmp_path / "from_config")},
                       fluctuation={"epochs": 20000, "exact_shortcut": True})
    monkeypatch.setenv("BOUNDARYWALK_OUT", str(tmp_path / "from_env"))
    assert run(["rho", "--config", cfg]) == 0
    assert (tmp_path / "from_env" / "rho.json").exists()
    assert run(["rho", "--config", cfg, "--out", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "rho.json").exists()
    monkeypatch.delenv("BOUNDARYWALK_OUT")
    assert run(["rho", "--config", cfg]) == 0
    assert (tmp_path / "from_config" / "rho.json").exists()


def test_json_only_output(tmp_path):
    cfg = write_config(tmp_path, outputs={"formats": ["json"]})
    out = tmp_path / "o"
    assert run(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "simulate.json").exists() and not (out / "simulate.csv").exists()


def test_validate_quick_subset(tmp_path):
    cfg = write_config(tmp_path, acceptance={"scale": "quick", "criteria": [1]})
    out = tmp_path / "o"
    lines = []
    assert run(["validate", "--config", cfg, "--out", str(out)], lines) == 0
    assert any(line.startswith("criterion 1 PASS") for line in lines)
    _, rows = reporting.read_csv(out / "acceptance.csv")
    assert rows[0]["passed"] == "true"


def test_module_entry_point_and_numpy_backend(tmp_path):
    cfg = write_config(tmp_path)
    env = {**os.environ, "BOUNDARYWALK_BACKEND": "numpy"}
    r = subprocess.run([sys.executable, "-m", "boundarywalk", "solve", "--config", cfg,
                        "--out", str(tmp_path / "o")], env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "u(0,0)" in r.stdout


def test_invalid_backend_rejected():
    env = {**os.environ, "BOUNDARYWALK_BACKEND": "fortran"}
    r = subprocess.run([sys.executable, "-c", "import boundarywalk.walk"], env=env,
                       capture_output=True, text=True)
    assert r.returncode != 0 and "BOUNDARYWALK_BACKEND" in r.stderr
