import csv
import json
import os

import numpy as np
import pytest

from mcpmod_futility.cli import main
from mcpmod_futility.config import Config, config_from_dict, load_config, to_toml
from mcpmod_futility.errors import ConfigError
from mcpmod_futility.reporting import read_csv
from mcpmod_futility.simulation import DEFAULT_DESIGN, SimScenario, generate_trial

SMALL_SIM = """\
[design]
n_total = 90

[sim]
lpfv_t = [50]
rho = [0.9]
interim_fracs = [0.3]
reps = 6
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_round_trip(tmp_path):
    cfg = load_config()
    assert cfg == Config()
    back = load_config(write(tmp_path, "c.toml", to_toml(cfg)))
    assert back.design == cfg.design and back.sim == cfg.sim and back.candidates == cfg.candidates


@pytest.mark.parametrize("text, where", [
    ("[sim]\nreps = 10\nbogus = 1\n", "sim.bogus (line 3)"),
    ("[simulation]\nreps = 1\n", "simulation (line 1)"),
    ("[sim]\n\nrho = [1.5]\n", "sim.rho (line 3)"),
    ("[test]\nalpha = 'small'\n", "test.alpha (line 2)"),
    ("[design]\nn_total = 100\n", "design.n_total (line 2)"),
])
def test_config_errors_name_the_line(tmp_path, text, where):
    with pytest.raises(ConfigError, match=where.replace("(", r"\(").replace(")", r"\)")):
        load_config(write(tmp_path, "bad.toml", text))


def test_candidates_table():
    cfg = config_from_dict({"candidates": [{"kind": "emax", "ed50": 2.0}, {"kind": "quadratic", "delta": -0.1}]})
    assert [c.kind for c in cfg.candidates] == ["emax", "quadratic"]
    with pytest.raises(ConfigError):
        config_from_dict({"candidates": [{"kind": "emax", "ed50": 1.0, "slope": 2}]})


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = write(tmp_path, "bad.toml", "[sim]\nbogus = 1\n")
    assert main(["contrasts", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["contrasts", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["contrasts", "--threads", "0", "--out", str(tmp_path / "o")]) == 2


def test_contrasts_command(tmp_path):
    out = tmp_path / "o"
    assert main(["contrasts", "--out", str(out)]) == 0
    with open(out / "contrasts.csv", newline="") as fh:
        rows = np.array([r[1:] for r in list(csv.reader(fh))[1:]], dtype=float)
    assert rows.shape == (9, 6)
    np.testing.assert_allclose(rows.sum(axis=1), 0, atol=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and set(manifest["files"]) == {"contrasts.csv", "critval.csv"}


def test_single_model_critical_value(tmp_path):
    cfg = write(tmp_path, "one.toml", '[[candidates]]\nkind = "emax"\ned50 = 1.0\n')
    out = tmp_path / "o"
    assert main(["critval", "--config", cfg, "--out", str(out)]) == 0
    (row,) = read_csv(out / "critval.csv")
    assert float(row["crit"]) == pytest.approx(1.95996, abs=1e-4)


def test_rerun_gives_identical_checksums(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["contrasts", "--seed", "5", "--out", str(out)]) == 0
    fa = json.loads((a / "manifest.json").read_text())["files"]
    fb = json.loads((b / "manifest.json").read_text())["files"]
    assert fa == fb


def test_power_complete_data_methods_agree(tmp_path):
    # half the planned patients, all with complete data at the cut
    sc = SimScenario(design=DEFAULT_DESIGN.with_total(90))
    trial = generate_trial(sc, np.random.default_rng(3))
    data = trial.censor(1000.0)
    path = tmp_path / "d.csv"
    data.to_csv(path)
    cfg = write(tmp_path, "p.toml", "[design]\nn_total = 180\n\n[power]\ncuts = [1000.0]\n")
    out = tmp_path / "o"
    assert main(["power", str(path), "--config", cfg, "--seed", "1", "--out", str(out)]) == 0
    lon, com = read_csv(out / "power.csv")
    assert lon["method"] == "longitudinal" and com["method"] == "completer"
    assert lon["error"] == "" and com["error"] == ""
    # half the planned patients; the baseline term makes it slightly less than one half
    assert 0.48 < lon["info_frac"] <= 0.5
    for key in ("sigma_hat", "info_frac", "pred_power", "cond_power_planned", "cond_power_interim"):
        assert lon[key] == pytest.approx(com[key], abs=2e-3)


def test_power_default_cuts_report_unreachable(tmp_path):
    sc = SimScenario(design=DEFAULT_DESIGN.with_total(90))
    path = tmp_path / "d.csv"
    generate_trial(sc, np.random.default_rng(4)).to_csv(path)
    out = tmp_path / "o"
    assert main(["power", str(path), "--seed", "1", "--out", str(out)]) == 0
    rows = read_csv(out / "power.csv")
    assert len(rows) == 8
    assert all(r["error"] == "" for r in rows[:6])
    assert all(r["error"].startswith("NoInformationRemaining") for r in rows[6:])


def test_power_bad_dataset(tmp_path):
    path = write(tmp_path, "d.csv", "patient_id,arm\n1,0\n")
    assert main(["power", path, "--out", str(tmp_path / "o")]) == 2


def test_simulate_and_calibrate_round_trip(tmp_path):
    cfg = write(tmp_path, "s.toml", SMALL_SIM)
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "rows.csv")
    assert len(rows) == 2 * 6 * 2
    assert {r["effect"] for r in rows} == {"null", "emax"}
    summary = (out / "summary.csv").read_bytes()
    os.remove(out / "summary.csv")
    assert main(["calibrate", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "summary.csv").read_bytes() == summary
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "calibrate"


def test_print_config(capsys):
    assert main(["print-config", "--seed", "7"]) == 0
    text = capsys.readouterr().out
    assert "seed = 7" in text and "[sim]" in text
