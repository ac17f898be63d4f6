import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from kitwpa.cli import main

FIXTURES = Path(__file__).parent / "fixtures" / "noise"


def run(tmp_path, *argv, out="out"):
    out_dir = tmp_path / out
    code = main([*argv, "--out-dir", str(out_dir)])
    return code, out_dir


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


SMALL_GAIN = {"sweep": {"f_min": 5e9, "f_max": 7e9, "points": 5, "mode": "three"}}


def test_dispersion_outputs(tmp_path):
    cfg = write_cfg(tmp_path, {"grid": {"f_min": 1e9, "f_max": 14e9, "step": 5e6}})
    code, out = run(tmp_path, "dispersion", "--preset", "nbtin-4to8", "--config", str(cfg))
    assert code == 0
    header = (out / "dispersion.csv").read_text().splitlines()[0]
    assert header == "f_Hz,re_k,im_k,in_stopband,k_minus_linear"
    sb = json.loads((out / "stopbands.json").read_text())
    lo, hi = sb["stopbands_hz"][0]
    assert lo < 12.5e9 < hi
    man = json.loads((out / "dispersion_manifest.json").read_text())
    assert set(man["outputs"]) == {"dispersion.csv", "stopbands.json"}
    assert str(cfg) in man["inputs"]
    assert man["version"] and man["config"]["grid"]["step"] == 5e6


def test_preset_dispersion_has_one_gap_at_12p5(tmp_path):
    code, out = run(tmp_path, "dispersion", "--preset", "nbtin-4to8")
    assert code == 0
    bands = json.loads((out / "stopbands.json").read_text())["stopbands_hz"]
    assert len(bands) == 1 and bands[0][0] < 12.5e9 < bands[0][1]


def test_empty_pattern_gives_bare_line(tmp_path):
    cfg = write_cfg(tmp_path, {"device": {"pattern": {}}, "grid": {"f_min": 1e9, "f_max": 20e9, "step": 10e6}})
    code, out = run(tmp_path, "dispersion", "--preset", "nbtin-4to8", "--config", str(cfg))
    assert code == 0
    assert json.loads((out / "stopbands.json").read_text())["stopbands_hz"] == []
    rows = np.loadtxt(out / "dispersion.csv", delimiter=",", skiprows=1)
    assert np.allclose(rows[:, 4], 0, atol=1e-9)


def test_bands(tmp_path):
    code, out = run(tmp_path, "bands", "--preset", "nbtin-4to8")
    assert code == 0
    b = json.loads((out / "bands.json").read_text())
    assert abs(b["idler_gap_freq_hz"] - 8.7e9) < 0.1e9
    assert b["signal_band_hz"][0] < 6e9 < b["signal_band_hz"][1]


def test_gain_reruns_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_GAIN)
    args = ("gain", "--preset", "nbtin-4to8", "--config", str(cfg))
    assert run(tmp_path, *args, out="a")[0] == 0
    assert run(tmp_path, *args, out="b")[0] == 0
    for name in ("gain.csv", "gain_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "gain_manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "gain_manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"]
    rows = (tmp_path / "a" / "gain.csv").read_text().splitlines()
    assert rows[0] == "f_Hz,gain_dB,idler_gain_dB" and len(rows) == 6


def test_pump_sweep_writes_one_file_per_pump(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_GAIN)
    code, out = run(tmp_path, "gain", "--preset", "nbtin-4to8", "--config", str(cfg), "--pump-sweep")
    assert code == 0
    names = sorted(p.name for p in out.glob("gain_fp*.csv"))
    assert names == ["gain_fp10550000000.csv", "gain_fp10600000000.csv", "gain_fp10650000000.csv"]
    summary = json.loads((out / "gain_summary.json").read_text())["curves"]
    assert [c["f_pump_hz"] for c in summary] == [10.55e9, 10.6e9, 10.65e9]
    tops = [c["signal_band_hz"][1] for c in summary]
    zeros = [c["phase_matched_hz"][0] for c in summary]
    assert tops == sorted(tops) and zeros == sorted(zeros) and len(set(tops)) == 3


def test_pump_sweep_explicit_list(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_GAIN)
    code, out = run(tmp_path, "gain", "--preset", "nbtin-4to8", "--config", str(cfg), "--pump-sweep", "10.5e9,10.7e9")
    assert code == 0
    assert len(list(out.glob("gain_fp*.csv"))) == 2
    assert run(tmp_path, "gain", "--preset", "nbtin-4to8", "--pump-sweep", "ten")[0] == 2


def test_ripple_conventions(tmp_path):
    code, out = run(tmp_path, "ripple", "--preset", "nbtin-4to8", "--ripple-convention", "roundtrip")
    assert code == 0
    r = json.loads((out / "ripple.json").read_text())
    assert r["convention"] == "round_trip"
    assert abs(r["measured_period_hz"] - 15e6) < 1e6


def test_ripple_oscillation_exits_numeric(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"ripple": {"r": 0.2, "gain_db": 30.0}})
    code, _ = run(tmp_path, "ripple", "--preset", "nbtin-4to8", "--config", str(cfg))
    assert code == 3
    assert "OscillationError" in capsys.readouterr().err


def test_noise_synth_then_extract(tmp_path):
    code, syn = run(tmp_path, "noise", "synth", "--preset", "nbtin-4to8", out="syn")
    assert code == 0
    for name in ("hot", "cold", "hot_off", "cold_off", "pump_off", "bypass", "gain"):
        assert (syn / f"synth_{name}.csv").is_file()
    code, out = run(tmp_path, "noise", "extract", "--config", str(syn / "noise_config.yaml"))
    assert code == 0
    summary = json.loads((out / "noise_summary.json").read_text())
    assert summary["n_a_mean"] == pytest.approx(0.7, abs=1e-6)
    assert summary["invalid_bins"] == 0


def test_noise_extract_on_fixtures(tmp_path):
    code, out = run(tmp_path, "noise", "extract", "--config", str(FIXTURES / "noise_config.yaml"))
    assert code == 0
    data = np.genfromtxt(out / "noise_extract.csv", delimiter=",", names=True)
    assert np.max(np.abs(data["n_a"] - 0.7)) < 1e-6
    assert np.max(np.abs(data["loss_dB"] - 1.0)) < 1e-9
    man = json.loads((out / "noise_extract_manifest.json").read_text())
    assert len(man["inputs"]) == 8


def test_noise_hemt(tmp_path):
    code, out = run(tmp_path, "noise", "hemt", "--config", str(FIXTURES / "noise_config.yaml"))
    assert code == 0
    data = np.genfromtxt(out / "hemt.csv", delimiter=",", names=True)
    assert np.allclose(data["n_hemt"], 13.0, atol=1e-6)


def test_missing_gain_file_is_a_config_error(tmp_path, capsys):
    d = tmp_path / "traces"
    shutil.copytree(FIXTURES, d)
    (d / "synth_gain.csv").unlink()
    code, out = run(tmp_path, "noise", "extract", "--config", str(d / "noise_config.yaml"))
    assert code == 2
    assert "noise.gain" in capsys.readouterr().err
    assert not out.exists()


def test_malformed_trace_reports_line(tmp_path, capsys):
    d = tmp_path / "traces"
    shutil.copytree(FIXTURES, d)
    lines = (d / "synth_hot.csv").read_text().splitlines()
    lines[5] = "4050000000.0,oops,linear,hot"
    (d / "synth_hot.csv").write_text("\n".join(lines) + "\n")
    code, _ = run(tmp_path, "noise", "extract", "--config", str(d / "noise_config.yaml"))
    assert code == 2
    assert "line 6" in capsys.readouterr().err


def test_numeric_failure_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"compression": {"f_signal": 6e9, "target_gain_db": 80.0, "p_in_min": -80,
                                               "p_in_max": -70, "p_in_step": 5, "mode": "three"}})
    code, _ = run(tmp_path, "compress", "--preset", "nbtin-4to8", "--config", str(cfg))
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_requires_config_or_preset(tmp_path, capsys):
    assert run(tmp_path, "bands")[0] == 2
    assert "need --config" in capsys.readouterr().err


def test_fit_istar(tmp_path):
    i = np.linspace(0, 1.5e-3, 7)
    f = 12.5e9 / np.sqrt(1 + (i / 3.2e-3) ** 2)
    cfg = write_cfg(tmp_path, {"fit_istar": {"data": [[float(a), float(b)] for a, b in zip(i, f)]}})
    code, out = run(tmp_path, "fit-istar", "--config", str(cfg))
    assert code == 0
    got = json.loads((out / "istar.json").read_text())
    assert got["i_star_a"] == pytest.approx(3.2e-3, rel=1e-3)


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kitwpa.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "kitwpa" in proc.stdout
