import json

import pytest

from kitwpa.config import PRESETS, load_config, validate
from kitwpa.errors import ConfigError
from kitwpa.phasematch import current_from_dbm


def test_presets_resolve_for_every_command():
    for name in PRESETS:
        cfg = load_config(preset=name)
        for cmd in ("dispersion", "bands", "gain", "compress", "ripple"):
            res = validate(cfg, cmd)
            assert res["line"].i_star == pytest.approx(3.2e-3)
        assert validate(cfg, "noise", "synth")["noise"]["synth"]["n_a"] == 0.7


def test_preset_pump_ratio():
    res = validate(load_config(preset="nbtin-4to8"), "gain")
    assert res["pump"].i_pump == pytest.approx(0.119 * 3.2e-3)
    assert res["sweep"]["points"] == 500


def test_presets_differ_only_in_period():
    a, b = PRESETS["nbtin-4to8"], PRESETS["nbtin-4to8-122"]
    assert a["device"]["pattern"]["mod_period"] == 122.7e-6
    assert b["device"]["pattern"]["mod_period"] == 122e-6
    assert {k: v for k, v in a.items() if k != "device"} == {k: v for k, v in b.items() if k != "device"}


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        load_config(preset="nope")


def test_file_overrides_preset(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("pump:\n  ratio: 0.05\n  f_pump: 10.0e9\n")
    cfg = load_config(p, "nbtin-4to8")
    assert cfg["pump"] == {"ratio": 0.05, "f_pump": 10.0e9}
    assert cfg["device"]["pattern"]["pitch"] == 2.2e-6


def test_empty_pattern_gives_bare_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"device": {"pattern": {}}}))
    res = validate(load_config(p, "nbtin-4to8"), "dispersion")
    assert res["pattern"] is None


def test_all_problems_reported_together():
    cfg = {"device": {"l_per_m": -1, "c_per_m": "x", "i_star": 1e-3},
           "pump": {"f_pump": 10e9, "ratio": 0.1, "p_dbm": -30}}
    with pytest.raises(ConfigError) as err:
        validate(cfg, "bands")
    text = "\n".join(err.value.problems)
    for field in ("device.l_per_m", "device.c_per_m", "device.length", "pump: set exactly one"):
        assert field in text


def test_pump_from_dbm_and_over_current():
    cfg = load_config(preset="nbtin-4to8")
    cfg["pump"] = {"f_pump": 10.6e9, "p_dbm": -30.0}
    assert validate(cfg, "bands")["pump"].i_pump == pytest.approx(current_from_dbm(-30.0))
    cfg["pump"] = {"f_pump": 10.6e9, "i_pump": 5e-3}
    with pytest.raises(ConfigError, match="below i_star"):
        validate(cfg, "bands")


def test_missing_noise_trace_names_field(tmp_path):
    p = tmp_path / "n.yaml"
    p.write_text("noise:\n  t_hot: 3.18\n  t_cold: 0.02\n  hot: hot.csv\n  n_hemt: 13\n")
    (tmp_path / "hot.csv").write_text("")
    with pytest.raises(ConfigError) as err:
        validate(load_config(p), "noise", "extract")
    text = "\n".join(err.value.problems)
    for key in ("noise.cold", "noise.pump_off", "noise.bypass", "noise.gain"):
        assert key in text
    assert "noise.hot" not in text


@pytest.mark.parametrize("text, msg", [("[1, 2]", "mapping"), ("a: [", "cannot parse")])
def test_bad_files(tmp_path, text, msg):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError, match=msg):
        load_config(p)


def test_bad_grid_and_ripple():
    cfg = load_config(preset="nbtin-4to8")
    cfg["grid"] = {"f_min": 5e9, "f_max": 1e9}
    with pytest.raises(ConfigError, match="f_max must exceed"):
        validate(cfg, "dispersion")
    cfg["ripple"]["r"] = 1.2
    with pytest.raises(ConfigError, match="ripple.r"):
        validate(cfg, "ripple")
