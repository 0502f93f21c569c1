"""Command-line driver: configuration handling, runs, and output files."""
from __future__ import annotations

import json

import numpy as np
import pytest

from atomlens import DEFAULT_D_MIN, ConfigError, target_mode
from atomlens.cli import RunConfig, _parse_set, main


def _write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


LENS = {
    "f": 4.0,
    "r_lens": 2.0,
    "delta_r": 0.5,
    "phi0": 0.3,
    "alpha": 0.2,
    "d_min": 0.1,
    "gamma_prime": 1.0,
}


@pytest.fixture(scope="module")
def design_dir(tmp_path_factory, table01):
    """A built design directory shared by the run commands."""
    base = tmp_path_factory.mktemp("cli")
    cfg = _write_config(base / "design.json", dict(LENS, output=str(base / "design")))
    assert main(["design", "--config", cfg]) == 0
    return base / "design"


# ---------------------------------------------------------------------------
# configuration assembly


def test_build_merges_defaults_and_overrides(tmp_path):
    cfg_file = _write_config(tmp_path / "c.json", {"f": 4.0, "r_lens": 2.0,
                                                   "delta_r": 0.5, "phi0": 0.3,
                                                   "alpha": 0.2})
    cfg = RunConfig.build("design", cfg_file,
                          {"output": str(tmp_path / "out"), "phi0": 0.4})
    assert cfg.command == "design"
    assert cfg.values["phi0"] == 0.4  # override wins over the file
    assert cfg.values["d_min"] == DEFAULT_D_MIN  # default filled in
    assert cfg.values["gamma_prime"] == 0.0
    assert cfg.precision == "double"
    assert cfg.budget_fraction == 0.75
    assert cfg.seed == 0
    assert cfg.parallel == 1


def test_build_validations(tmp_path):
    out = {"output": str(tmp_path)}
    with pytest.raises(ConfigError, match="unknown command"):
        RunConfig.build("frobnicate", None, out)
    with pytest.raises(ConfigError, match="unknown configuration keys"):
        RunConfig.build("design", None, dict(out, waist=2.0))
    with pytest.raises(ConfigError, match="output directory"):
        RunConfig.build("design", None, {})
    with pytest.raises(ConfigError, match="precision"):
        RunConfig.build("design", None, dict(out, precision="quad"))
    with pytest.raises(ConfigError, match="budget_fraction"):
        RunConfig.build("design", None, dict(out, budget_fraction=0.0))
    with pytest.raises(ConfigError, match="seed"):
        RunConfig.build("design", None, dict(out, seed=0.5))
    with pytest.raises(ConfigError, match="parallel"):
        RunConfig.build("design", None, dict(out, parallel=0))
    with pytest.raises(ConfigError, match="not both"):
        RunConfig.build("simulate", None,
                        dict(out, design="somewhere", f=4.0, r_lens=2.0,
                             delta_r=0.5, phi0=0.3, alpha=0.2))


def test_build_rejects_bad_config_files(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.build("design", str(missing), {"output": "x"})
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError, match="valid JSON"):
        RunConfig.build("design", str(broken), {"output": "x"})
    listy = tmp_path / "list.json"
    listy.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        RunConfig.build("design", str(listy), {"output": "x"})


def test_parse_set():
    parsed = _parse_set(["f=4.5", "deltas=[1, 2]", "precision=double",
                         "flag=true"])
    assert parsed == {"f": 4.5, "deltas": [1, 2], "precision": "double",
                      "flag": True}
    with pytest.raises(ConfigError, match="key=value"):
        _parse_set(["novalue"])


# ---------------------------------------------------------------------------
# design


def test_design_outputs(design_dir, capsys):
    assert (design_dir / "positions.csv").exists()
    assert (design_dir / "design.json").exists()
    manifest = json.loads((design_dir / "manifest.json").read_text())
    assert manifest["command"] == "design"
    assert manifest["config"]["f"] == 4.0
    assert manifest["precision"] == "double"
    assert "code_version" in manifest


def test_design_deterministic(tmp_path, table01):
    for sub in ("one", "two"):
        cfg = _write_config(tmp_path / f"{sub}.json",
                            dict(LENS, output=str(tmp_path / sub)))
        assert main(["design", "--config", cfg]) == 0
    for name in ("positions.csv", "design.json"):
        a = (tmp_path / "one" / name).read_bytes()
        b = (tmp_path / "two" / name).read_bytes()
        assert a == b


def test_design_prints_size(tmp_path, table01, capsys):
    cfg = _write_config(tmp_path / "c.json", dict(LENS, output=str(tmp_path / "d")))
    assert main(["design", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "N = 1302 emitters (72 buffer)" in out
    assert "mirror-reduced" in out


def test_design_empty_warns(tmp_path, table01, capsys):
    gap_mid = 0.5 * sum(table01.gap)
    sag = 2.0 * np.pi * (np.hypot(0.2, 4.0) - 4.0)
    cfg = _write_config(
        tmp_path / "c.json",
        {"f": 4.0, "r_lens": 0.4, "delta_r": 0.4, "phi0": gap_mid + sag,
         "alpha": 0.0, "d_min": 0.1, "output": str(tmp_path / "d")},
    )
    assert main(["design", "--config", cfg]) == 0
    captured = capsys.readouterr()
    assert "unreachable band" in captured.err
    assert "N = 0 emitters" in captured.out


def test_design_set_override_recorded(tmp_path, table01):
    cfg = _write_config(tmp_path / "c.json", dict(LENS, output=str(tmp_path / "d")))
    assert main(["design", "--config", cfg, "--set", "phi0=0.4"]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["config"]["phi0"] == 0.4


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json",
                        dict(LENS, waist=2.0, output=str(tmp_path / "d")))
    assert main(["design", "--config", cfg]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_missing_required_exits_2(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json",
                        {"f": 4.0, "output": str(tmp_path / "d")})
    assert main(["design", "--config", cfg]) == 2


# ---------------------------------------------------------------------------
# simulate and sweeps


def test_simulate_outputs(design_dir, tmp_path):
    out = tmp_path / "sim"
    rc = main(["simulate", "--output", str(out), "--set",
               f"design={design_dir}", "--set", "w0=1.0"])
    assert rc == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["eta"] == pytest.approx(0.918948788646, abs=1e-6)
    assert metrics["epsilon"] == pytest.approx(0.882806851362, abs=1e-6)
    assert metrics["eta_tilde"] == pytest.approx(0.966204486178, abs=1e-6)
    assert metrics["delta"] == 0.0
    assert metrics["N"] == 1302
    planes = sorted(p.name for p in out.glob("field_*"))
    assert any(p.startswith("field_y0") for p in planes)
    assert any(p.startswith("field_z") for p in planes)


def test_simulate_memory_refusal_exits_3(design_dir, tmp_path, capsys):
    rc = main(["simulate", "--output", str(tmp_path / "sim"),
               "--budget-fraction", "1e-9", "--set",
               f"design={design_dir}", "--set", "w0=1.0"])
    assert rc == 3
    assert "memory budget" in capsys.readouterr().err


def test_scan_detuning(design_dir, tmp_path):
    out = tmp_path / "scan"
    rc = main(["scan-detuning", "--output", str(out), "--set",
               f"design={design_dir}", "--set", "w0=1.0",
               "--set", "deltas=[-1.0, 0.0, 1.0]"])
    assert rc == 0
    lines = (out / "detuning_scan.csv").read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "delta,eta,epsilon,eta_tilde"
    data = np.loadtxt(out / "detuning_scan.csv", delimiter=",", skiprows=2)
    assert data.shape == (3, 4)
    assert data[1, 0] == 0.0
    assert data[1, 1] == pytest.approx(0.918948788646, abs=1e-6)


def test_scan_detuning_parallel_identical(design_dir, tmp_path):
    args = ["scan-detuning", "--set", f"design={design_dir}", "--set",
            "w0=1.0", "--set", "deltas=[-0.5, 0.5]"]
    assert main(args + ["--output", str(tmp_path / "serial")]) == 0
    assert main(args + ["--output", str(tmp_path / "threads"),
                        "--parallel", "2"]) == 0
    a = (tmp_path / "serial" / "detuning_scan.csv").read_bytes()
    b = (tmp_path / "threads" / "detuning_scan.csv").read_bytes()
    assert a == b


def test_gamma_sweep(design_dir, tmp_path):
    out = tmp_path / "gs"
    rc = main(["gamma-sweep", "--output", str(out), "--set",
               f"design={design_dir}", "--set", "w0=1.0",
               "--set", "gamma_list=[0.0, 2.0]"])
    assert rc == 0
    data = np.loadtxt(out / "gamma_sweep.csv", delimiter=",", skiprows=2)
    assert data.shape == (2, 4)
    assert data[0, 1] > data[1, 1]  # more loss, less efficiency


def test_disorder_sweep_with_prediction(design_dir, tmp_path):
    gs = tmp_path / "gs"
    assert main(["gamma-sweep", "--output", str(gs), "--set",
                 f"design={design_dir}", "--set", "w0=1.0",
                 "--set", "gamma_list=[1.0, 4.0, 16.0]"]) == 0
    out = tmp_path / "dis"
    rc = main(["disorder-sweep", "--output", str(out), "--seed", "3",
               "--set", f"design={design_dir}", "--set", "w0=1.0",
               "--set", "delta_d_list=[0.0, 0.02]", "--set", "n_configs=2",
               "--set", f"gamma_sweep={gs / 'gamma_sweep.csv'}"])
    assert rc == 0
    lines = (out / "disorder_sweep.csv").read_text().splitlines()
    header = lines[1].split(",")
    assert header[:2] == ["delta_d", "eta_mean"]
    assert "eta_predicted" in header
    data = np.loadtxt(out / "disorder_sweep.csv", delimiter=",", skiprows=2)
    assert data.shape == (2, len(header))
    std_col = header.index("eta_std")
    assert data[0, std_col] == 0.0  # no spread without displacement
    eta_col = header.index("eta_mean")
    pred_col = header.index("eta_predicted")
    # the clean point and its prediction agree closely
    assert data[0, pred_col] == pytest.approx(data[0, eta_col], abs=0.01)


def test_scan_magnification(design_dir, tmp_path):
    out = tmp_path / "mag"
    rc = main(["scan-magnification", "--output", str(out), "--set", "w0=1.0",
               "--set", "f_list=[3.0, 4.0]", "--set", "r_lens=2.0",
               "--set", "delta_r=0.5", "--set", "phi0=0.3",
               "--set", "alpha=0.2", "--set", "gamma_prime=1.0",
               "--set", "d_min=0.1"])
    assert rc == 0
    lines = (out / "magnification_scan.csv").read_text().splitlines()
    assert lines[1].split(",")[:3] == ["f", "magnification", "eta"]
    data = np.loadtxt(out / "magnification_scan.csv", delimiter=",", skiprows=2)
    assert data.shape[0] == 2
    assert data[1, 1] == pytest.approx(target_mode(1.0, 4.0).magnification,
                                       rel=1e-9)
    n_col = lines[1].split(",").index("n_atoms")
    assert data[1, n_col] == 1302


# ---------------------------------------------------------------------------
# optimize


def test_optimize_command(tmp_path, table01, capsys):
    out = tmp_path / "opt"
    rc = main(["optimize", "--output", str(out),
               "--set", "f=4.0", "--set", "r_lens=2.0", "--set", "w0=1.0",
               "--set", "gamma_prime=1.0",
               "--set", 'pso={"swarm_size": 5, "iterations": 2}'])
    assert rc == 0
    assert "best: phi0" in capsys.readouterr().out
    best = json.loads((out / "best.json").read_text())
    assert best["evaluations"] == 10
    assert best["fidelity"] == "table-model"
    assert 0.0 < best["eta"] <= 1.0
    log = (out / "optimization_log.csv").read_text().splitlines()
    assert len(log) == 2 + 10


def test_optimize_infeasible_exits_4(tmp_path, table01, capsys):
    rc = main(["optimize", "--output", str(tmp_path / "opt"),
               "--set", "f=4.0", "--set", "r_lens=2.0", "--set", "w0=1.0",
               "--set", "gamma_prime=-1.0",
               "--set", 'pso={"swarm_size": 5, "iterations": 2}'])
    assert rc == 4
    assert "numerical failure" in capsys.readouterr().err
