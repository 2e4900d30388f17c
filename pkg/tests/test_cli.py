import csv
import json
import subprocess
import sys

import pytest

from sspdsim import cli
from sspdsim.config import ConfigError, build_config, parse_lines


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_cfg(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


TMM = "experiment = tmm-spectrum\n"


# --- run --------------------------------------------------------------------


def test_tmm_run_writes_spectrum_and_manifest(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["run", write_cfg(tmp_path, TMM), "--out", str(out)]) == cli.EXIT_OK
    header, rows = read_csv(out / "spectrum.csv")
    assert header == ["wavelength_nm", "R", "T", "A_0_NbN", "A_1_SiO2", "A_total"]
    assert len(rows) == 81
    assert float(rows[0][0]) == 500.0 and float(rows[-1][0]) == 1300.0
    for r in rows:
        R, T, A = float(r[1]), float(r[2]), float(r[-1])
        assert abs(R + T + A - 1.0) < 1e-10
    man = json.loads((out / "manifest.jsonl").read_text())
    assert man["experiment"] == "tmm-spectrum" and man["seed"] == 1
    assert {o["path"] for o in man["outputs"]} == {"spectrum.csv", "effective.cfg"}
    assert len(man["config_sha256"]) == 64
    assert "spectrum.csv" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, "experiment = lifetime-sim\npulses.count = 200000\n")
    for d in ("a", "b"):
        assert cli.main(["run", cfg, "--out", str(tmp_path / d), "--seed", "9"]) == 0
    for f in ("tcspc_histogram.csv", "lifetime_fit.csv", "effective.cfg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert cli.main(["run", cfg, "--out", str(tmp_path / "c"), "--seed", "10"]) == 0
    assert (tmp_path / "a" / "tcspc_histogram.csv").read_bytes() != \
        (tmp_path / "c" / "tcspc_histogram.csv").read_bytes()


def test_set_override_and_effective_config(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, TMM)
    assert cli.main(["run", cfg, "--out", str(out), "--set", "sweep.wavelength_count=5",
                     "--set", "stack.layer_thicknesses_nm=[4.0, 120.0]"]) == 0
    _, rows = read_csv(out / "spectrum.csv")
    assert len(rows) == 5
    eff = (out / "effective.cfg").read_text()
    assert "sweep.wavelength_count = 5\n" in eff
    # the effective config reproduces the run
    out2 = tmp_path / "o2"
    assert cli.main(["run", str(out / "effective.cfg"), "--out", str(out2)]) == 0
    assert (out / "spectrum.csv").read_bytes() == (out2 / "spectrum.csv").read_bytes()


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "env"))
    assert cli.main(["run", write_cfg(tmp_path, TMM, "sweep1.cfg")]) == 0
    assert (tmp_path / "env" / "sweep1" / "spectrum.csv").exists()


def test_csv_floats_are_lossless(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", write_cfg(tmp_path, TMM), "--out", str(out)]) == 0
    from sspdsim.optics import absorption_spectrum, default_stack
    resp = absorption_spectrum(default_stack(), [500.0])[0]
    _, rows = read_csv(out / "spectrum.csv")
    assert float(rows[0][1]) == resp.R


# --- errors ---------------------------------------------------------------------


def test_unknown_kind_lists_kinds(tmp_path, capsys):
    rc = cli.main(["run", write_cfg(tmp_path, "experiment = nonsense\n"), "--out", str(tmp_path)])
    assert rc == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "tmm-spectrum" in err and "count-rate" in err and ":1:" in err


def test_unknown_key_reports_line(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TMM + "# comment\nsweep.wavelenght_count = 3\n")
    assert cli.main(["run", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "exp.cfg:3" in err and "sweep.wavelenght_count" in err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("line", ["sweep.wavelength_count = 2.5", "sweep.wavelength_count = 'x'",
                                  "sweep.wavelength_start_nm = true",
                                  "stack.layer_materials = [1, 2]", "sweep.wavelength_count = 0"])
def test_type_and_range_errors(tmp_path, line):
    cfg = write_cfg(tmp_path, TMM + line + "\n")
    assert cli.main(["run", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_numeric_failure_exit_code(tmp_path, capsys):
    # an output rate beyond the stabilized branch has no operating point
    cfg = write_cfg(tmp_path, "experiment = count-rate\ncount_rate.mode = recovery\n"
                              "recovery.N_out_cps = 5e8\n")
    assert cli.main(["run", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERIC
    # grid too coarse for the jitter kernel
    cfg = write_cfg(tmp_path, "experiment = g2-model\ncurve.step_ns = 0.1\n", "g.cfg")
    assert cli.main(["run", cfg, "--out", str(tmp_path / "g")]) == cli.EXIT_NUMERIC
    assert "ResolutionError" in capsys.readouterr().err


def test_io_failures(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == cli.EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", write_cfg(tmp_path, TMM), "--out", str(blocker)]) == cli.EXIT_IO


def test_usage_errors():
    assert cli.main([]) == cli.EXIT_CONFIG
    assert cli.main(["presets", "run", "fig9z"]) == cli.EXIT_CONFIG
    assert cli.main(["run", "x.cfg", "--set", "novalue"]) in (cli.EXIT_CONFIG, cli.EXIT_IO)


# --- config parser ------------------------------------------------------------------


def test_config_comments_and_quotes():
    raw = parse_lines("a.b = 'x # y'  # trailing\nc = [1, 2]\n\n# only comment\nd = true\n")
    assert raw == {"a.b": ("x # y", 1), "c": ([1, 2], 2), "d": (True, 5)}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_lines("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match=":1:"):
        parse_lines("no equals sign\n")


def test_config_defaults_and_digest():
    a = build_config(TMM)
    b = build_config(TMM + "sweep.wavelength_count = 81\n")
    assert a.to_text() == b.to_text() and a.digest() == b.digest()
    assert build_config(TMM, seed=3).seed == 3
    with pytest.raises(ConfigError):
        build_config(TMM, seed=-1)
    with pytest.raises(ConfigError, match="missing 'experiment'"):
        build_config("seed = 1\n")


# --- presets ----------------------------------------------------------------------------


def test_presets_list(capsys):
    assert cli.main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    for name in ("fig1c", "fig2e", "fig3a", "fig3b", "fig3c", "fig3d", "fig6a", "fig6b"):
        assert name in out


@pytest.mark.parametrize("name,files,columns", [
    ("fig1c", ["spectrum.csv"], ["wavelength_nm", "R", "T"]),
    ("fig3d", ["recovery.csv", "operating_point.csv"], ["bias_frac", "t_ns", "probability"]),
    ("fig6a", ["g2_zero_vs_lifetime.csv"], ["lifetime_ns", "scenario", "qe", "g2_zero"]),
    ("fig6b", ["g2_zero_vs_qe.csv"], ["lifetime_ns", "scenario", "qe", "g2_zero"]),
])
def test_preset_runs(tmp_path, name, files, columns):
    out = tmp_path / name
    assert cli.main(["presets", "run", name, "--out", str(out)]) == 0
    for f in files:
        assert (out / f).exists()
    header, rows = read_csv(out / files[0])
    assert header[:len(columns)] == columns
    if name == "fig6b":
        assert float(rows[0][2]) == 0.001
        assert {r[1] for r in rows} == {"APD_measured", "SSPD"}


def test_console_script_entry_point(tmp_path):
    rc = subprocess.run([sys.executable, "-m", "sspdsim.cli", "presets", "list"],
                        capture_output=True, text=True)
    assert rc.returncode == 0 and "fig3b" in rc.stdout
