import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from bohmdiff import cli
from bohmdiff.config import Mode, reference_config
from bohmdiff.io import (
    OUTPUT_ENV,
    ConfigParseError,
    RunConfig,
    SwarmBlock,
    parse_config,
    read_csv,
    resolve_output_dir,
    serialize_config,
)

ROOT = Path(__file__).resolve().parents[1]
REFERENCE_CFG = ROOT / "reference.cfg"

SMALL = """
[separator]
theta_min = 0.3
theta_max = 0.6
n_samples = 200

[field]
z_min = -2000
z_max = 2000
nz = 5
R_min = 0
R_max = 2000
nR = 3

[survey]
theta_min = 1.0
theta_max = 1.2
n = 2

[swarm]
n = 2
z_start = -3000
R_min = 2900
R_max = 3200
r_detect = 5000

[tof]
theta_min_deg = 60
theta_max_deg = 170
n_bins = 11
theta_ref_deg = 150

[fit]
n_realizations = 10
N_perp = 4
"""


def small_config(tmp_path, extra=SMALL):
    # the reference file ends with its [swarm] block, replaced here by the small one
    text = REFERENCE_CFG.read_text().split("[swarm]")[0] + extra
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def body(path):
    return Path(path).read_text().split("\n", 1)[1]


# --- configuration ---------------------------------------------------------------------------


def test_reference_cfg_parses():
    cfg = parse_config(REFERENCE_CFG.read_text())
    assert cfg.physical == reference_config()
    assert cfg.mode is Mode.ADIABATIC
    assert cfg.swarm.n == 360 and cfg.swarm.R_min == 1500.0 and cfg.swarm.R_max == 3300.0


def test_empty_file_lists_required_keys():
    with pytest.raises(ConfigParseError) as err:
        parse_config("")
    for key in ("k0", "D", "Z", "Z1", "a", "d", "sigma_a", "C_coherent", "C_diffuse", "q_max", "delta"):
        assert key in str(err.value)


def test_q_max_bound_is_named():
    text = REFERENCE_CFG.read_text().replace("q_max = 40", "q_max = 100")
    with pytest.raises(ConfigParseError) as err:
        parse_config(text)
    assert "Bragg existence bound" in str(err.value)
    assert err.value.line == text.splitlines().index("q_max = 100") + 1


def test_unknown_key_reports_line_and_column():
    text = REFERENCE_CFG.read_text() + "\n[fit]\n  n_real = 5\n"
    with pytest.raises(ConfigParseError) as err:
        parse_config(text)
    assert err.value.line == len(text.splitlines())
    assert err.value.column == 3
    assert "n_real" in str(err.value)


def test_unknown_section_and_syntax_errors():
    with pytest.raises(ConfigParseError, match="unknown section"):
        parse_config(REFERENCE_CFG.read_text() + "\n[plots]\nx = 1\n")
    with pytest.raises(ConfigParseError) as err:
        parse_config("[physical]\nthis line has no separator\n")
    assert err.value.line == 2
    with pytest.raises(ConfigParseError, match="cannot read"):
        parse_config(REFERENCE_CFG.read_text().replace("D = 1000.0", "D = wide"))


def test_block_validation_runs_before_any_command():
    with pytest.raises(ConfigParseError, match="r_detect"):
        parse_config(REFERENCE_CFG.read_text().replace("r_detect = 5e4", "r_detect = 5e3"))
    with pytest.raises(ConfigParseError, match="mode"):
        parse_config(REFERENCE_CFG.read_text().replace("mode = adiabatic", "mode = quasi"))


@given(
    st.floats(100, 2000),
    st.floats(100, 5000),
    st.floats(1, 100),
    st.floats(0, 0.05),
    st.integers(1, 40),
    st.sampled_from(list(Mode)),
    st.integers(0, 2**31),
    st.one_of(st.none(), st.floats(1, 1e4)),
)
@settings(max_examples=50, deadline=None)
def test_config_round_trip(k0, D, Z, sigma, q_max, mode, seed, t_max):
    phys = reference_config(k0=k0, D=D, Z=Z, sigma_a=sigma, q_max=min(q_max, int(k0 * 0.257 / math.pi)) or 1)
    cfg = RunConfig(phys, mode, "results", {"swarm": seed, "fit": seed + 1}, swarm=SwarmBlock(t_max=t_max))
    assert parse_config(serialize_config(cfg)) == cfg


def test_output_dir_precedence(monkeypatch):
    cfg = parse_config(REFERENCE_CFG.read_text())
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert resolve_output_dir(cfg) == Path("out")
    monkeypatch.setenv(OUTPUT_ENV, "/tmp/env-out")
    assert resolve_output_dir(cfg) == Path("/tmp/env-out")
    assert resolve_output_dir(cfg, "cli-out") == Path("cli-out")


# --- commands ------------------------------------------------------------------------------


def run_cli(args):
    return cli.main([str(a) for a in args])


def test_separator_command_and_manifest(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "a"
    assert run_cli(["separator", "--config", cfg, "--out", out]) == 0
    man = json.loads((out / "separator.manifest.json").read_text())
    written = sorted(p.name for p in out.iterdir() if p.suffix == ".csv")
    assert sorted(man["outputs"]) == written
    assert all((out / f).stat().st_size > 0 for f in written)
    assert man["failures"] == []
    meta, header, rows = read_csv(out / "channels.csv")
    assert meta["config_sha256"] == man["config_sha256"]
    assert header[:3] == ["q", "theta_q", "case"]
    row4 = rows[3]
    assert row4[2] == "I"
    assert float(row4[1]) == pytest.approx(0.473811, abs=1e-4)
    # 17 significant digits in scientific notation
    mant = row4[1].split("e")[0].replace("-", "").replace(".", "")
    assert len(mant) == 17


def test_rerun_is_byte_identical(tmp_path):
    cfg = small_config(tmp_path)
    for name in ("a", "b"):
        assert run_cli(["separator", "--config", cfg, "--out", tmp_path / name]) == 0
        assert run_cli(["fit-fraunhofer", "--config", cfg, "--out", tmp_path / name, "--seed", 3]) == 0
    for f in ("separator_branches.csv", "channels.csv", "fit.csv"):
        assert body(tmp_path / "a" / f) == body(tmp_path / "b" / f)


def test_seed_override_changes_fit(tmp_path):
    cfg = small_config(tmp_path)
    run_cli(["fit-fraunhofer", "--config", cfg, "--out", tmp_path / "a", "--seed", 1])
    run_cli(["fit-fraunhofer", "--config", cfg, "--out", tmp_path / "b", "--seed", 2])
    assert body(tmp_path / "a" / "fit.csv") != body(tmp_path / "b" / "fit.csv")


def test_field_command(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "f"
    assert run_cli(["field", "--config", cfg, "--out", out, "--mode", "time-dependent"]) == 0
    _, header, rows = read_csv(out / "field.csv")
    assert len(rows) == 15 and header[0] == "z_nm"
    # the forward axis behind the target is outside the model
    fwd = [r for r in rows if float(r[1]) == 0.0 and float(r[0]) > 0]
    assert fwd and all(r[2] == "nan" for r in fwd)


def test_rx_survey_command(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "s"
    assert run_cli(["rx-survey", "--config", cfg, "--out", out]) == 0
    _, header, rows = read_csv(out / "rx_survey.csv")
    assert len(rows) == 2 and all(r[1].startswith("ok") for r in rows)
    assert all(float(r[header.index("RX_nm")]) > 0 for r in rows)


def test_trajectories_and_tof_commands(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "t"
    assert run_cli(["trajectories", "--config", cfg, "--out", out, "--stride", 50]) == 0
    _, header, rows = read_csv(out / "exits.csv")
    assert header == ["R0", "theta_exit", "T_exit", "T_exit_s", "direction_exit", "crossings", "status"]
    assert [r[-1] for r in rows] == ["detected", "detected"]
    _, _, tracks = read_csv(out / "tracks.csv")
    assert {int(r[0]) for r in tracks} == {0, 1}
    # tof from the stored exits: most bins are empty, so the command reports failures
    code = run_cli(["tof", "--config", cfg, "--out", out, "--exits", out / "exits.csv"])
    _, header, rows = read_csv(out / "tof.csv")
    assert header[:6] == ["theta_bin", "theta_bin_deg", "theta_mean", "dT", "dT_s", "n_in_bin"]
    counts = [int(r[5]) for r in rows]
    assert sum(counts) == 2
    assert code == (1 if 0 in counts else 0)
    man = json.loads((out / "tof.manifest.json").read_text())
    assert man["outputs"] == ["tof.csv"]
    assert len(man["failures"]) >= counts.count(0)


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[physical]\nk0 = 1\n")
    assert run_cli(["separator", "--config", bad, "--out", tmp_path]) == 2
    assert "missing required keys" in capsys.readouterr().err
    assert run_cli(["separator", "--config", tmp_path / "absent.cfg"]) == 2


def test_dispatch_rejects_unknown_command(tmp_path):
    with pytest.raises(ValueError):
        cli.dispatch("plots", parse_config(REFERENCE_CFG.read_text()), tmp_path)
