"""Configuration parsing, CLI subcommands and study bookkeeping."""
import csv
from pathlib import Path

import numpy as np
import pytest

from mpetdg import study as study_mod
from mpetdg.cli import main
from mpetdg.config import ConfigError, parse_config
from mpetdg.model import table1_parameters

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
test_case: TC2_2D
mesh: {{dim: 2, divisions: 2}}
degrees: {{p: 2, q: 1}}
time: {{dt: 1.0e-7, T: 3.0e-7}}
parameters: {{preset: table3}}
study:
  mode: {mode}
  divisions: {divisions}
  pairings: [[1, 2]]
  degrees: [1, 2]
  p_offset: 1
output:
  directory: {out}
  csv: result.csv
  figure: {figure}
"""


def write_config(tmp_path, name="c.yaml", mode="h", divisions="[2, 4]", figure="true", out=None):
    out = out or tmp_path / "out"
    path = tmp_path / name
    path.write_text(SMALL.format(mode=mode, divisions=divisions, out=out, figure=figure))
    return path


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.yaml")):
        cfg = parse_config(path)
        assert cfg.time.dt > 0


def test_explicit_table1_matches_preset():
    cfg = parse_config(CONFIGS / "tc1_table1_explicit.yaml")
    ref = table1_parameters()
    assert cfg.params.n_networks == 4
    assert np.allclose(cfg.params.beta, ref.beta)
    for a, b in zip(cfg.params.networks, ref.networks):
        assert (a.alpha, a.c, a.mu) == (b.alpha, b.c, b.mu)


def test_zero_storage_names_field():
    text = (CONFIGS / "tc1_table1_explicit.yaml").read_text().replace("c: 0.1", "c: 0.0", 1)
    with pytest.raises(ConfigError, match=r"networks\[0\]\.c"):
        parse_config(text)


def test_missing_key_listed():
    text = (CONFIGS / "tc2_h.yaml").read_text().replace("dt: 1.0e-7, ", "")
    with pytest.raises(ConfigError, match=r"missing key: time\.dt"):
        parse_config(text)


def test_unknown_key_has_line_number():
    text = (CONFIGS / "tc2_h.yaml").read_text() + "bogus_section: 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert "unknown key: bogus_section" in str(exc.value)
    assert "line" in str(exc.value)


def test_all_errors_reported_together():
    text = "test_case: TC2_2D\nmesh: {dim: 4}\nparameters: {preset: nope}\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    msg = str(exc.value)
    assert "mesh.dim" in msg and "time" in msg and "preset" in msg


def test_degree_range_checked():
    text = (CONFIGS / "tc2_h.yaml").read_text().replace("p: 2, q: 1", "p: 0, q: 1")
    with pytest.raises(ConfigError, match="degrees"):
        parse_config(text)


def test_empty_divisions_fails_before_assembly(tmp_path, monkeypatch):
    cfg = parse_config(write_config(tmp_path, divisions="[]"))
    monkeypatch.setattr(study_mod, "run_case", lambda *a, **k: pytest.fail("assembled"))
    with pytest.raises(ValueError, match="divisions"):
        study_mod.run_convergence_study(cfg)
    assert not (tmp_path / "out").exists()


def test_invalid_config_leaves_no_output(tmp_path, capsys):
    out = tmp_path / "never"
    path = tmp_path / "bad.yaml"
    path.write_text(SMALL.format(mode="h", divisions="[2]", out=out, figure="false")
                    .replace("preset: table3", "preset: table9"))
    with pytest.raises(SystemExit, match="config error"):
        main(["study", str(path)])
    assert not out.exists()


def test_cli_study_writes_csv_and_figure(tmp_path, capsys):
    path = write_config(tmp_path)
    assert main(["study", str(path)]) == 0
    printed = capsys.readouterr().out
    rows = list(csv.DictReader(open(tmp_path / "out" / "result.csv")))
    assert [r["pairing"] for r in rows] == ["P1-P2", "P1-P2"]
    assert rows[0]["roc_u"] == "" and float(rows[1]["roc_u"]) > 0
    assert "err_u_dg" in printed
    assert (tmp_path / "out" / "result.png").stat().st_size > 0


def test_study_csv_is_deterministic(tmp_path):
    a = write_config(tmp_path, "a.yaml", figure="false", out=tmp_path / "a")
    b = write_config(tmp_path, "b.yaml", figure="false", out=tmp_path / "b")
    main(["study", str(a), "--seed", "3"])
    main(["study", str(b), "--seed", "3"])
    assert (tmp_path / "a" / "result.csv").read_bytes() == (tmp_path / "b" / "result.csv").read_bytes()


def test_p_study_records_failure_and_continues(tmp_path, monkeypatch, capsys):
    path = write_config(tmp_path, mode="p", figure="false")
    real = study_mod.run_case

    def flaky(mesh, case, p, q, *args, **kwargs):
        if q == 1:
            raise RuntimeError("solver diverged")
        return real(mesh, case, p, q, *args, **kwargs)

    monkeypatch.setattr(study_mod, "run_case", flaky)
    assert main(["study", str(path)]) == 1
    err = capsys.readouterr().err
    assert "FAILED P1-P2" in err and "solver diverged" in err
    rows = list(csv.DictReader(open(tmp_path / "out" / "result.csv")))
    assert rows[0]["err_u_dg"] == "" and float(rows[1]["err_u_dg"]) > 0
    assert rows[1]["pairing"] == "P2-P3"


def test_cli_run_outputs(tmp_path, capsys):
    path = write_config(tmp_path)
    text = path.read_text().replace("  figure: true\n", "  figure: true\n  energy_stride: 1\n")
    path.write_text(text)
    assert main(["run", str(path), "--dump-matrices", "--threads", "1"]) == 0
    out = tmp_path / "out"
    assert "err_u_dg=" in capsys.readouterr().out
    assert (out / "fields_final.vtk").exists()
    energy = list(csv.reader(open(out / "energy.csv")))
    assert len(energy) == 1 + 4  # header plus initial state and three steps
    assert (out / "matrices" / "K_u.coo").exists()


def test_cli_check_short(capsys):
    assert main(["check", "--steps", "20"]) == 0
    assert "checks passed" in capsys.readouterr().out
