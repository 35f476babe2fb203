import json

import numpy as np
import pytest

from ssmkit import cli, storage
from ssmkit.cli import RunConfig, run
from ssmkit.errors import ConfigError


def duffing_backbone_config(tmp_path, out="out"):
    return {
        "model": {"builtin": "duffing",
                  "params": {"omega0": 2.0, "zeta": 0.005, "gamma": 1.0}},
        "analysis": "backbone",
        "modes": 2,
        "order": 5,
        "rho_grid": {"max": 0.3, "count": 12},
        "observable": {"dof": 0},
        "output_dir": str(tmp_path / out),
        "seed": 7,
    }


def test_config_roundtrip(tmp_path):
    cfg = RunConfig.from_dict(duffing_backbone_config(tmp_path))
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    data = json.loads(json.dumps(cfg.to_dict()))
    assert RunConfig.from_dict(data) == cfg


def test_config_validation_errors(tmp_path):
    base = duffing_backbone_config(tmp_path)
    bad = dict(base, order=0)
    with pytest.raises(ConfigError, match="order"):
        RunConfig.from_dict(bad).validate()
    with pytest.raises(ConfigError, match="modes"):
        RunConfig.from_dict(dict(base, modes=3)).validate()
    with pytest.raises(ConfigError, match="analysis"):
        RunConfig.from_dict(dict(base, analysis="wat")).validate()
    with pytest.raises(ConfigError, match="unknown config fields"):
        RunConfig.from_dict(dict(base, bogus=1))
    with pytest.raises(ConfigError, match="omega_range"):
        RunConfig.from_dict(dict(base, analysis="frc",
                                 forcing={"dof": 0, "epsilon": 0.1})).validate()


def test_backbone_run_monotone_frequency(tmp_path):
    cfg = RunConfig.from_dict(duffing_backbone_config(tmp_path))
    manifest = run(cfg)
    assert manifest["outputs"] == ["backbone.csv"]
    rows = (tmp_path / "out" / "backbone.csv").read_text().strip().split("\n")
    assert rows[0] == "amplitude,frequency,rho"
    freqs = [float(r.split(",")[1]) for r in rows[1:]]
    assert all(b > a for a, b in zip(freqs, freqs[1:]))  # hardening oscillator
    assert (tmp_path / "out" / "coefficients.ssmtab").exists()
    assert (tmp_path / "out" / "manifest.json").exists()
    assert manifest["evaluation"]["black_box"] > 0


def test_runs_are_deterministic(tmp_path):
    cfg_a = RunConfig.from_dict(duffing_backbone_config(tmp_path, "a"))
    cfg_b = RunConfig.from_dict(duffing_backbone_config(tmp_path, "b"))
    run(cfg_a)
    run(cfg_b)
    csv_a = (tmp_path / "a" / "backbone.csv").read_bytes()
    csv_b = (tmp_path / "b" / "backbone.csv").read_bytes()
    assert csv_a == csv_b
    tab_a = (tmp_path / "a" / "coefficients.ssmtab").read_bytes()
    tab_b = (tmp_path / "b" / "coefficients.ssmtab").read_bytes()
    assert tab_a == tab_b


def test_frc_run_and_flags(tmp_path):
    cfg = RunConfig.from_dict({
        "model": {"builtin": "duffing",
                  "params": {"omega0": 2.0, "zeta": 0.005, "gamma": 1.0}},
        "analysis": "frc",
        "order": 5,
        "forcing": {"dof": 0, "value": 0.5, "epsilon": 0.02},
        "omega_range": [1.9, 2.3],
        "response_mode": "TI",
        "observable": {"dof": 0},
        "output_dir": str(tmp_path / "frc"),
        "seed": 0,
    })
    manifest = run(cfg)
    text = (tmp_path / "frc" / "frc.csv").read_text().strip().split("\n")
    assert text[0].startswith("Omega,rho_1,theta_1,out_amp,stability,flag")
    flags = [r.split(",")[5] for r in text[1:]]
    assert "SN" in flags
    assert manifest["bifurcations"]


def test_simulate_run(tmp_path):
    cfg = RunConfig.from_dict({
        "model": {"builtin": "duffing",
                  "params": {"omega0": 2.0, "zeta": 0.005, "gamma": 1.0}},
        "analysis": "simulate",
        "order": 3,
        "simulate": {"p0": [[0.05, 0.0], [0.05, 0.0]], "t_span": [0.0, 5.0]},
        "output_dir": str(tmp_path / "sim"),
    })
    manifest = run(cfg)
    rows = (tmp_path / "sim" / "trajectory.csv").read_text().strip().split("\n")
    assert rows[0] == "t,re_p1,im_p1,re_p2,im_p2,observable"
    assert len(rows) > 10
    assert manifest["truncated"] is False


def test_main_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg = duffing_backbone_config(tmp_path)
    cfg["order"] = 0
    cfg_path.write_text(json.dumps(cfg))
    assert cli.main(["backbone", "--config", str(cfg_path)]) == 2
    # numerical failure: non-hyperbolic system
    cfg2 = duffing_backbone_config(tmp_path)
    cfg2["model"]["params"]["zeta"] = 0.0
    cfg2_path = tmp_path / "zeta0.json"
    cfg2_path.write_text(json.dumps(cfg2))
    assert cli.main(["backbone", "--config", str(cfg2_path)]) == 3
    # happy path through main, with a flag override
    cfg3_path = tmp_path / "ok.json"
    cfg3 = duffing_backbone_config(tmp_path, out="cli_out")
    cfg3_path.write_text(json.dumps(cfg3))
    assert cli.main(["backbone", "--config", str(cfg3_path), "--order", "3"]) == 0
    manifest = json.loads((tmp_path / "cli_out" / "manifest.json").read_text())
    assert manifest["config"]["order"] == 3


def test_model_subcommands(tmp_path, capsys):
    assert cli.main(["model", "list"]) == 0
    assert "duffing" in capsys.readouterr().out
    assert cli.main(["model", "describe", "pipe"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["dofs"] == 4 and info["has_tensors"]
    out = tmp_path / "export"
    assert cli.main(["model", "export", "duffing", "--out", str(out)]) == 0
    capsys.readouterr()
    K = storage.load_matrix(out / "K.mtx")
    assert K.toarray()[0, 0] == pytest.approx(4.0)
    meta = json.loads((out / "model.json").read_text())
    assert meta["dofs"] == 1


def test_eig_subcommand(tmp_path, capsys):
    cfg_path = tmp_path / "eig.json"
    cfg = duffing_backbone_config(tmp_path)
    cfg["analysis"] = "compute"
    cfg["order"] = 1
    cfg_path.write_text(json.dumps(cfg))
    assert cli.main(["eig", "--config", str(cfg_path)]) == 0
    outlines = capsys.readouterr().out.strip().split("\n")
    vals = [complex(float(a), float(b)) for a, b in
            (line.split() for line in outlines)]
    assert vals[0].imag == pytest.approx(2.0 * np.sqrt(1 - 0.005 ** 2), rel=1e-9)


def test_verify_subcommand(capsys):
    assert cli.main(["verify", "--order", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_verify_threaded_matches_serial(capsys):
    assert cli.main(["verify", "--order", "3", "--threads", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4


def test_external_matrices_path(tmp_path):
    # export a builtin, then run on the exported Matrix Market files with a
    # zero nonlinearity: the linear backbone must be flat
    out = tmp_path / "exported"
    assert cli.main(["model", "export", "duffing", "--out", str(out)]) == 0
    cfg = RunConfig.from_dict({
        "model": {"matrices": {"M": str(out / "M.mtx"), "C": str(out / "C.mtx"),
                               "K": str(out / "K.mtx")}},
        "analysis": "backbone",
        "order": 3,
        "rho_grid": {"max": 0.2, "count": 5},
        "observable": {"dof": 0},
        "output_dir": str(tmp_path / "ext_run"),
    })
    run(cfg)
    rows = (tmp_path / "ext_run" / "backbone.csv").read_text().strip().split("\n")
    freqs = [float(r.split(",")[1]) for r in rows[1:]]
    assert np.allclose(freqs, freqs[0], rtol=1e-12)


def test_tv_run_persists_forced_corrections(tmp_path):
    from ssmkit.indexing import CoefficientTable
    cfg = RunConfig.from_dict({
        "model": {"builtin": "duffing",
                  "params": {"omega0": 2.0, "zeta": 0.005, "gamma": 1.0}},
        "analysis": "frc",
        "order": 3,
        "forcing": {"dof": 0, "value": 0.5, "epsilon": 0.008},
        "omega_range": [1.98, 2.05],
        "response_mode": "TV",
        "observable": {"dof": 0},
        "output_dir": str(tmp_path / "tv"),
    })
    run(cfg)
    table = CoefficientTable.load(tmp_path / "tv" / "coefficients.ssmtab")
    assert len(table.nonautonomous) > 0
    corr = next(iter(table.nonautonomous.values()))
    assert corr.x0.shape == (2,)


def test_frc_convergence_check(tmp_path):
    cfg = RunConfig.from_dict({
        "model": {"builtin": "duffing",
                  "params": {"omega0": 2.0, "zeta": 0.005, "gamma": 1.0}},
        "analysis": "frc",
        "order": 5,
        "convergence_check": True,
        "forcing": {"dof": 0, "value": 0.5, "epsilon": 0.008},
        "omega_range": [1.95, 2.1],
        "observable": {"dof": 0},
        "output_dir": str(tmp_path / "conv"),
    })
    manifest = run(cfg)
    conv = manifest["order_convergence"]
    assert conv["orders"] == [3, 5]
    assert conv["max_relative_gap"] < 0.05


def test_complex_shift_targets_higher_pair(tmp_path):
    cfg = RunConfig.from_dict({
        "model": {"builtin": "spring_chain",
                  "params": {"n": 3, "k2": 0.1, "k3": 0.1,
                             "damping": [0.001, 0.002]}},
        "analysis": "compute",
        "modes": 2,
        "order": 1,
        "shift": [0.0, 1.4],
        "output_dir": str(tmp_path / "shifted"),
    })
    manifest = run(cfg)
    assert abs(manifest["eigenvalues"][0][1]) > 1.0  # not the slowest pair
