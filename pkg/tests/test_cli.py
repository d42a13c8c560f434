import json
import os

import numpy as np
import pytest

from nullwave import cli
from nullwave.nullforms import preset

SMALL = """
[obstacle]
kind = "disk"
r0 = 0.4

[grid]
h = 0.1

[time]
T_final = {T}
sample_every = 5

[coefficients]
preset = "{preset}"

[data]
epsilon = {eps}
M0 = 3.0
"""


def _cfg_file(tmp_path, T=1.0, preset_name="wavemap", eps=0.1, extra=""):
    path = tmp_path / "run.toml"
    path.write_text(SMALL.format(T=T, preset=preset_name, eps=eps) + extra)
    return path


def _lines():
    out = []
    return out, out.append


def test_defaults_filled(tmp_path):
    path = tmp_path / "min.toml"
    path.write_text('[coefficients]\npreset = "wavemap"\n')
    cfg = cli.parse_config(path)
    assert cfg["time"]["cfl"] == 0.45 and cfg["diagnostics"]["z_max"] == 2
    assert cfg["grid"]["R_out"] == pytest.approx(10.0 + 3.0 + 2 * 0.05)
    assert len(cfg["data"]["u0"]) == 2


def test_cfl_cap_error(tmp_path):
    path = _cfg_file(tmp_path, extra="")
    path.write_text(path.read_text().replace("T_final", "cfl = 0.9\nT_final"))
    with pytest.raises(cli.ConfigError) as info:
        cli.parse_config(path)
    assert any("0.5" in e and "cfl" in e for e in info.value.errors)


def test_unknown_key_and_all_errors_reported(tmp_path):
    path = _cfg_file(tmp_path)
    path.write_text(path.read_text().replace("T_final", "cflx = 0.3\nT_final")
                    + "\n[bogus]\nx = 1\n")
    with pytest.raises(cli.ConfigError) as info:
        cli.parse_config(path)
    text = str(info.value)
    assert "cflx" in text and "bogus" in text
    path = _cfg_file(tmp_path)
    path.write_text(path.read_text().replace("h = 0.1", "h = -1").replace("M0 = 3.0", "M0 = 0.5"))
    with pytest.raises(cli.ConfigError) as info:
        cli.parse_config(path)
    assert len(info.value.errors) >= 2


def test_parse_errors(tmp_path):
    with pytest.raises(cli.ConfigError, match="cannot read"):
        cli.parse_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config(bad)


def test_T_zero_and_meta_round_trip(tmp_path):
    cfg = cli.parse_config(_cfg_file(tmp_path, T=0.0))
    out, log = _lines()
    assert cli.cmd_run(cfg, tmp_path / "out", log) == 0
    rows = (tmp_path / "out" / "series.csv").read_text().splitlines()
    assert len(rows) == 2
    meta = json.loads((tmp_path / "out" / "meta.json").read_text())
    assert meta["status"] == "ok" and meta["config_sha256"] == cfg.digest()
    assert "h4_norm" in meta["data_size"]
    again = cli.parse_config(tmp_path / "out" / "meta.json")
    assert again.canonical() == cfg.canonical()
    assert cli.config_from_dict(again.canonical()).canonical() == cfg.canonical()
    for name in ("fits.json", "plot.gp"):
        assert (tmp_path / "out" / name).exists()
    assert not [p for p in os.listdir(tmp_path / "out") if p.startswith(".tmp-")]


def test_blow_up_exits_2(tmp_path):
    cfg = cli.parse_config(_cfg_file(tmp_path, T=3.0, preset_name="nonnull", eps=40.0))
    out, log = _lines()
    assert cli.cmd_run(cfg, tmp_path / "out", log) == cli.EXIT_NUMERICAL
    meta = json.loads((tmp_path / "out" / "meta.json").read_text())
    assert meta["status"] == "numerical_abort"
    assert "non-finite" in meta["abort"]["message"]
    assert (tmp_path / "out" / "series.csv").read_text().startswith("t,energy")


def test_run_writes_fits_and_snapshots(tmp_path):
    cfg = cli.parse_config(_cfg_file(tmp_path, T=4.0, preset_name="linear",
                                     extra='\n[output]\nsnapshots = true\n'))
    out, log = _lines()
    assert cli.cmd_run(cfg, tmp_path / "out", log) == 0
    fits = json.loads((tmp_path / "out" / "fits.json").read_text())
    assert fits["window"] == [0.8, 4.0]
    for key in ("local_energy_norm_R2", "u_linf_R2", "S_u_envelope", "energy"):
        assert key in fits
    assert fits["local_energy_norm_R2"]["exponent"] < 0
    assert (tmp_path / "out" / "grid.bin").read_bytes()[:8] == b"NWGRID01"
    assert (tmp_path / "out" / "final.bin").read_bytes()[:8] == b"NWFLD001"


def test_output_dir_is_file(tmp_path):
    cfg = cli.parse_config(_cfg_file(tmp_path, T=0.0))
    blocker = tmp_path / "blocker"
    blocker.write_text("x")
    out, log = _lines()
    assert cli.cmd_run(cfg, blocker / "out", log) == cli.EXIT_IO
    assert "error" in out[0]


def test_check_null_files(tmp_path):
    for name, code in (("cubic", 0), ("nonnull", 1), ("mixed", 0)):
        path = tmp_path / f"{name}.txt"
        path.write_text(preset(name).to_text())
        out, log = _lines()
        assert cli.cmd_check_null(str(path), log) == code
        text = "\n".join(out)
        if name == "cubic":
            assert "c_0(1 1 1 1) = 1" in text
        if name == "nonnull":
            assert "block (1 1 1 1): NOT NULL" in text and "q^11" in text
        if name == "mixed":
            assert "c_01(1 1 1 2) = 0.5" in text and "c_12(2 2 1 2) = 0.5" in text
    bad = tmp_path / "bad.txt"
    bad.write_text("1 1 1\n")
    assert cli.cmd_check_null(str(bad), lambda s: None) == cli.EXIT_IO
    assert cli.cmd_check_null("wavemap", lambda s: None) == 0


def test_fit_decay_command(tmp_path):
    t = [float(v) for v in np.linspace(1, 50, 40)]
    path = tmp_path / "s.csv"
    path.write_text("t,v,c\n" + "\n".join(f"{a!r},{3 / a!r},2.0" for a in t) + "\n")
    out, log = _lines()
    assert cli.cmd_fit_decay(path, "v", 1, 50, log) == 0
    assert out[-1].startswith("-1.000")
    assert cli.cmd_fit_decay(path, "c", 1, 50, log) == 0
    assert out[-1].startswith("0.000")
    assert cli.cmd_fit_decay(path, "nope", 1, 50, log) == cli.EXIT_IO
    assert cli.cmd_fit_decay(path, "v", 1, 2, log) == cli.EXIT_NUMERICAL
    assert cli.cmd_fit_decay(tmp_path / "none.csv", "v", 1, 2, log) == cli.EXIT_IO


def test_write_atomic_keeps_old_file_on_failure(tmp_path):
    path = tmp_path / "f.txt"
    cli.write_atomic(path, "old")

    class Boom:
        def __str__(self):
            raise RuntimeError("boom")

    with pytest.raises(TypeError):
        cli.write_atomic(path, Boom())
    assert path.read_text() == "old"
    assert os.listdir(tmp_path) == ["f.txt"]


def test_main_entry_points(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NULLWAVE_THREADS", "1")
    path = _cfg_file(tmp_path, T=0.0)
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    assert cli.main(["check-null", "nonnull"]) == 1
    assert cli.main(["--threads", "1", "fit-decay", str(tmp_path / "o" / "series.csv"), "zz", "0", "1"]) == 3
    bad = tmp_path / "bad.toml"
    bad.write_text('[time]\ncfl = 0.9\n')
    assert cli.main(["run", "--config", str(bad)]) == 3
    assert "0.5" in capsys.readouterr().err


def test_reference_configs_parse():
    here = os.path.join(os.path.dirname(__file__), "..", "configs")
    names = sorted(f for f in os.listdir(here) if f.endswith(".toml"))
    assert names
    for name in names:
        cli.parse_config(os.path.join(here, name))
