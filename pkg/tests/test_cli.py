import json

import numpy as np
import pytest

from mpme_lab.cli import main, parse_profile
from mpme_lab.lattice import read_snapshot


def run_cli(*argv):
    return main(list(argv))


def test_unknown_command_exits_2(capsys):
    assert run_cli("frobnicate") == 2
    capsys.readouterr()


def test_bad_value_exits_2(capsys):
    assert run_cli("ergodicity", "--N", "5", "--k", "2", "--g", "example9") == 2
    err = capsys.readouterr().err
    assert "example9" in err


def test_ergodicity_report(tmp_path, capsys):
    code = run_cli(
        "ergodicity", "--d", "1", "--N", "5", "--k", "3",
        "--g", "example1", "--q", "1", "--m", "2", "--out", str(tmp_path),
    )
    assert code == 0
    blob = json.loads(capsys.readouterr().out)
    assert blob["component_count"] >= 2
    assert blob["blocked_count"] > 0
    assert blob["sigma_star_single_component"] is True
    assert blob["max_detailed_balance_violation"] <= 1e-12
    file_blob = json.loads((tmp_path / "ergodicity_N5_k3_m2.json").read_text())
    assert file_blob == blob


def test_pde_mass_conservation(tmp_path, capsys):
    code = run_cli(
        "pde", "--g", "example1", "--q", "1", "--m", "2",
        "--profile", "cosine:1.0,0.2,1", "--t", "0.05", "--M", "64",
        "--out", str(tmp_path),
    )
    assert code == 0
    capsys.readouterr()
    lines = [l for l in (tmp_path / "pde.csv").read_text().splitlines() if not l.startswith("#")]
    values = np.array([float(l.split(",")[1]) for l in lines[1:]])
    assert values.size == 64
    assert values.mean() == pytest.approx(1.0, rel=1e-12)
    # config embedded for provenance
    text = (tmp_path / "pde.csv").read_text()
    assert "# profile = cosine:1.0,0.2,1" in text


def test_sample_roundtrip_and_determinism(tmp_path, capsys):
    for sub in ("a", "b"):
        code = run_cli(
            "sample", "--N", "32", "--profile", "const:1.0", "--seed", "9",
            "--out", str(tmp_path / sub),
        )
        assert code == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "sample_N32_seed9.txt").read_bytes()
    b = (tmp_path / "b" / "sample_N32_seed9.txt").read_bytes()
    assert a == b
    config, meta = read_snapshot(tmp_path / "a" / "sample_N32_seed9.txt")
    assert meta["N"] == 32
    assert config.total == config.occupancy.sum()


def test_simulate_writes_snapshots(tmp_path, capsys):
    code = run_cli(
        "simulate", "--N", "32", "--profile", "const:1.0", "--t", "0.01",
        "--seed", "3", "--out", str(tmp_path),
    )
    assert code == 0
    capsys.readouterr()
    config, meta = read_snapshot(tmp_path / "snapshot_t0.01.txt")
    assert meta["t_macro"] == 0.01
    csv = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert csv[0] == "seed,t_macro,site_or_gridpoint,value"
    assert len(csv) == 1 + 32
    assert (tmp_path / "simulate_config.json").exists()


def test_measures_table_and_entropy(tmp_path, capsys):
    code = run_cli(
        "measures", "--g", "example1", "--q", "1", "--rho-grid", "0.5,1.0",
        "--profile", "const:1.0", "--profile2", "const:0.5", "--N", "3",
        "--out", str(tmp_path),
    )
    assert code == 0
    capsys.readouterr()
    rows = [l for l in (tmp_path / "measures.csv").read_text().splitlines() if not l.startswith("#")]
    header = rows[0].split(",")
    assert header == ["rho", "psi", "Z", "R", "D"]
    rho1 = dict(zip(header, map(float, rows[2].split(","))))
    assert rho1["psi"] == pytest.approx(0.5, abs=1e-9)
    assert rho1["R"] == pytest.approx(1.0, abs=1e-9)
    assert rho1["D"] == pytest.approx(0.25, rel=1e-4)
    entropy = json.loads((tmp_path / "entropy.json").read_text())
    assert entropy["relative_entropy"] > 0


def test_hydro_small_run_and_byte_identity(tmp_path, capsys):
    argv = [
        "hydro", "--N", "16,32", "--profile", "cosine:1.0,0.2,1",
        "--t", "0.01", "--seeds", "10", "--M", "32", "--seed", "5",
        "--threads", "2", "--baseline",
    ]
    assert run_cli(*argv, "--out", str(tmp_path / "r1")) == 0
    assert run_cli(*argv, "--out", str(tmp_path / "r2")) == 0
    capsys.readouterr()
    # CSV embeds only the plan (no output path): byte identical
    for name in ("hydro_report.csv", "baseline_report.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    # JSON embeds the full config incl. the out dir; identical otherwise
    for name in ("hydro_report.json", "baseline_report.json"):
        blobs = []
        for sub in ("r1", "r2"):
            blob = json.loads((tmp_path / sub / name).read_text())
            blob["config"].pop("out")
            blobs.append(blob)
        assert blobs[0] == blobs[1]
    blob = json.loads((tmp_path / "r1" / "hydro_report.json").read_text())
    assert len(blob["entries"]) == 2
    assert blob["config"]["seeds"] == 10


def test_localeq_smoke(tmp_path, capsys):
    code = run_cli(
        "localeq", "--N", "32", "--profile", "const:1.0", "--t", "0.01",
        "--seeds", "10", "--M", "32", "--field", "g", "--out", str(tmp_path),
    )
    assert code == 0
    capsys.readouterr()
    blob = json.loads((tmp_path / "localeq_report.json").read_text())
    assert blob["rows"][0]["psi"] == "g"
    assert blob["rows"][0]["discrepancy"] >= 0


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nN = 5\nk = 2\ng = example1\nq = 1\n")
    code = run_cli("ergodicity", "--config", str(cfg), "--k", "3", "--out", str(tmp_path))
    assert code == 0
    blob = json.loads(capsys.readouterr().out)
    assert blob["k"] == 3  # flag wins
    assert blob["N"] == 5  # config file supplies the rest


def test_profile_parser_errors():
    with pytest.raises(ValueError):
        parse_profile("wedge:1.0", 1)
    with pytest.raises(ValueError):
        parse_profile("cosine:1.0", 1)
    prof = parse_profile("cosine:1.0,0.2,1,0", 2)
    assert prof.d == 2
