"""Run configuration: presets, file loading and fail-fast validation.

A configuration is a nested mapping with optional sections ``device``,
``grid``, ``pump``, ``sweep``, ``compression``, ``ripple``, ``noise``,
``fit_istar`` and ``output``.  Every problem found is collected and reported
together in a single :class:`ConfigError` before anything is computed.
"""

from __future__ import annotations

import copy
import json
import math
import re
from pathlib import Path

import yaml

from .errors import ConfigError, DomainError
from .linemodel import FilmLine, StubPattern
from .phasematch import PumpConfig, current_from_dbm

_DEVICE_4TO8 = {
    "l_per_m": 16.64e-6,
    "c_per_m": 6.45e-9,
    "i_star": 3.2e-3,
    "length": 0.1,
    "pattern": {"pitch": 2.2e-6, "stub_avg": 10.8e-6, "stub_mod": 2.08e-6, "mod_period": 122.7e-6},
}

PRESETS = {
    "nbtin-4to8": {
        "device": _DEVICE_4TO8,
        "grid": {"f_min": 0.1e9, "f_max": 20e9, "step": 1e6},
        "pump": {"f_pump": 10.6e9, "ratio": 0.119},
        "sweep": {"f_min": 2e9, "f_max": 19e9, "points": 500, "mode": "six", "probe_dbm": -90.0,
                  "pump_freqs": [10.55e9, 10.6e9, 10.65e9]},
        "compression": {"f_signal": 6e9, "target_gain_db": 15.0, "p_in_min": -80.0, "p_in_max": -20.0, "p_in_step": 1.0, "mode": "six"},
        "ripple": {"r": 0.1, "gain_db": 15.0, "f_min": 6e9, "f_max": 6.2e9, "step": 0.1e6, "convention": "as_printed"},
        "noise": {"t_hot": 3.18, "t_cold": 0.02,
                  "synth": {"n_a": 0.7, "n_hemt": 13.0, "loss_db": 1.0, "gain_db": 15.0, "g_hemt_db": 38.0,
                            "f_min": 4e9, "f_max": 8e9, "points": 401, "seed": 0, "noise": 0.0}},
    },
}
PRESETS["nbtin-4to8-122"] = copy.deepcopy(PRESETS["nbtin-4to8"])
PRESETS["nbtin-4to8-122"]["device"]["pattern"]["mod_period"] = 122e-6



class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``10.6e9`` (no exponent sign) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)

DISPERSION_DEFAULT_GRID = {"f_min": 0.1e9, "f_max": 20e9, "step": 1e6}


def load_config(path=None, preset: str | None = None) -> dict:
    """Merge an optional preset with an optional YAML/JSON file (file wins)."""
    cfg: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}"])
        cfg = copy.deepcopy(PRESETS[preset])
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError([f"config: cannot read {path}: {exc}"]) from exc
        try:
            data = json.loads(text) if path.suffix == ".json" else yaml.load(text, Loader=_Loader)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError([f"config: cannot parse {path}: {exc}"]) from exc
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(["config: top level must be a mapping"])
        cfg = _merge(cfg, data)
        cfg.setdefault("_base_dir", str(path.parent.resolve()))
    return cfg


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and value and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


class _Checker:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.problems: list[str] = []

    def section(self, name, required=True) -> dict | None:
        sec = self.cfg.get(name)
        if sec is None:
            if required:
                self.problems.append(f"{name}: section is missing")
            return None
        if not isinstance(sec, dict):
            self.problems.append(f"{name}: must be a mapping")
            return None
        return sec

    def number(self, sec, where, key, required=True, default=None, positive=False, minimum=None, integer=False):
        if sec is None:
            return default
        if key not in sec or sec[key] is None:
            if required:
                self.problems.append(f"{where}.{key}: required")
            return default
        value = sec[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.problems.append(f"{where}.{key}: expected a number, got {value!r}")
            return default
        if not math.isfinite(value):
            self.problems.append(f"{where}.{key}: must be finite")
            return default
        if integer and int(value) != value:
            self.problems.append(f"{where}.{key}: expected an integer")
            return default
        if positive and not value > 0:
            self.problems.append(f"{where}.{key}: must be positive, got {value!r}")
            return default
        if minimum is not None and value < minimum:
            self.problems.append(f"{where}.{key}: must be at least {minimum}, got {value!r}")
            return default
        return int(value) if integer else float(value)

    def choice(self, sec, where, key, options, default):
        if sec is None or sec.get(key) is None:
            return default
        if sec[key] not in options:
            self.problems.append(f"{where}.{key}: must be one of {sorted(options)}, got {sec[key]!r}")
            return default
        return sec[key]

    def path(self, sec, where, key, required=True):
        if sec is None or sec.get(key) is None:
            if required:
                self.problems.append(f"{where}.{key}: required input file is not set")
            return None
        p = Path(sec[key])
        if not p.is_absolute():
            p = Path(self.cfg.get("_base_dir", ".")) / p
        if not p.is_file():
            self.problems.append(f"{where}.{key}: file {str(p)!r} does not exist")
            return None
        return p

    def done(self):
        if self.problems:
            raise ConfigError(self.problems)


def _device(ck: _Checker):
    sec = ck.section("device")
    line = pattern = None
    vals = {k: ck.number(sec, "device", k, positive=True) for k in ("l_per_m", "c_per_m", "i_star", "length")}
    z_t = ck.number(sec, "device", "z_target", required=False, positive=True)
    v_t = ck.number(sec, "device", "v_target", required=False, positive=True)
    if v_t is not None and v_t >= 1:
        ck.problems.append("device.v_target: expressed as a fraction of c, must be below 1")
    pat = sec.get("pattern") if sec else None
    if pat:
        if not isinstance(pat, dict):
            ck.problems.append("device.pattern: must be a mapping")
        else:
            pitch = ck.number(pat, "device.pattern", "pitch", positive=True)
            avg = ck.number(pat, "device.pattern", "stub_avg", minimum=0.0)
            mod = ck.number(pat, "device.pattern", "stub_mod", required=False, default=0.0, minimum=0.0)
            period = ck.number(pat, "device.pattern", "mod_period", required=False, positive=True)
            sz = ck.number(pat, "device.pattern", "stub_z0", required=False, positive=True)
            sv = ck.number(pat, "device.pattern", "stub_vph", required=False, positive=True)
            if None not in (pitch, avg):
                try:
                    pattern = StubPattern(pitch, avg, mod, period, sz, sv)
                except DomainError as exc:
                    ck.problems.append(f"device.pattern: {exc}")
    if None not in vals.values():
        try:
            line = FilmLine(vals["l_per_m"], vals["c_per_m"], vals["i_star"], vals["length"], z_t, v_t)
        except DomainError as exc:
            ck.problems.append(f"device: {exc}")
    return line, pattern


def _grid(ck: _Checker, name="grid", defaults=None):
    sec = ck.cfg.get(name)
    if sec is None:
        sec = dict(defaults or DISPERSION_DEFAULT_GRID)
    elif not isinstance(sec, dict):
        ck.problems.append(f"{name}: must be a mapping")
        return None
    else:
        sec = {**(defaults or DISPERSION_DEFAULT_GRID), **sec}
    lo = ck.number(sec, name, "f_min", positive=True)
    hi = ck.number(sec, name, "f_max", positive=True)
    step = ck.number(sec, name, "step", positive=True)
    if None not in (lo, hi) and hi <= lo:
        ck.problems.append(f"{name}: f_max must exceed f_min")
        return None
    if None in (lo, hi, step):
        return None
    return {"f_min": lo, "f_max": hi, "step": step}


def _pump(ck: _Checker, line):
    sec = ck.section("pump")
    if sec is None:
        return None
    f_p = ck.number(sec, "pump", "f_pump", positive=True)
    given = [k for k in ("i_pump", "ratio", "p_dbm") if sec.get(k) is not None]
    if len(given) != 1:
        ck.problems.append("pump: set exactly one of i_pump, ratio, p_dbm")
        return None
    key = given[0]
    value = ck.number(sec, "pump", key, positive=key != "p_dbm")
    if f_p is None or value is None:
        return None
    if key == "i_pump":
        i_p, p_dbm = value, None
    elif key == "ratio":
        if line is None:
            return None
        i_p, p_dbm = value * line.i_star, None
    else:
        i_p, p_dbm = current_from_dbm(value), value
    if line is not None and not i_p < line.i_star:
        ck.problems.append(f"pump: current {i_p:.4g} A must stay below i_star {line.i_star:.4g} A")
        return None
    return PumpConfig(f_p, i_p, p_dbm)


def validate(cfg: dict, command: str, sub: str | None = None) -> dict:
    """Check everything ``command`` needs; return resolved objects."""
    ck = _Checker(cfg)
    out: dict = {}
    needs_device = command in ("dispersion", "bands", "gain", "compress", "ripple")
    if needs_device:
        out["line"], out["pattern"] = _device(ck)
    if command == "dispersion":
        out["grid"] = _grid(ck)
    if command in ("bands", "gain", "compress"):
        out["pump"] = _pump(ck, out["line"])
    if command == "gain":
        sec = ck.section("sweep")
        out["sweep"] = {
            "f_min": ck.number(sec, "sweep", "f_min", positive=True),
            "f_max": ck.number(sec, "sweep", "f_max", positive=True),
            "points": ck.number(sec, "sweep", "points", integer=True, minimum=1),
            "mode": ck.choice(sec, "sweep", "mode", {"three", "six", "three_tone", "six_tone"}, "six"),
            "probe_dbm": ck.number(sec, "sweep", "probe_dbm", required=False, default=-90.0),
            "pump_freqs": None,
        }
        if sec and sec.get("pump_freqs") is not None:
            pf = sec["pump_freqs"]
            if not isinstance(pf, list) or not pf or not all(isinstance(x, (int, float)) and x > 0 for x in pf):
                ck.problems.append("sweep.pump_freqs: expected a non-empty list of positive frequencies")
            else:
                out["sweep"]["pump_freqs"] = [float(x) for x in pf]
    if command == "compress":
        sec = ck.section("compression")
        out["compression"] = {
            "f_signal": ck.number(sec, "compression", "f_signal", positive=True),
            "target_gain_db": ck.number(sec, "compression", "target_gain_db", required=False),
            "p_in_min": ck.number(sec, "compression", "p_in_min"),
            "p_in_max": ck.number(sec, "compression", "p_in_max"),
            "p_in_step": ck.number(sec, "compression", "p_in_step", positive=True),
            "mode": ck.choice(sec, "compression", "mode", {"three", "six", "three_tone", "six_tone"}, "three"),
        }
        c = out["compression"]
        if None not in (c["p_in_min"], c["p_in_max"]) and c["p_in_max"] <= c["p_in_min"]:
            ck.problems.append("compression: p_in_max must exceed p_in_min")
    if command == "ripple":
        sec = ck.section("ripple")
        out["ripple"] = {
            "r": ck.number(sec, "ripple", "r", minimum=0.0),
            "t": ck.number(sec, "ripple", "t", required=False, minimum=0.0),
            "gain_db": ck.number(sec, "ripple", "gain_db"),
            "length": ck.number(sec, "ripple", "length", required=False, positive=True),
            "f_min": ck.number(sec, "ripple", "f_min", positive=True),
            "f_max": ck.number(sec, "ripple", "f_max", positive=True),
            "step": ck.number(sec, "ripple", "step", positive=True),
            "convention": ck.choice(sec, "ripple", "convention", {"as_printed", "round_trip", "printed", "roundtrip"}, "as_printed"),
        }
        r = out["ripple"]["r"]
        if r is not None and r >= 1:
            ck.problems.append("ripple.r: must be below 1")
    if command == "noise":
        sec = ck.section("noise")
        out["noise"] = _noise(ck, sec, sub)
    if command == "fit-istar":
        sec = ck.section("fit_istar")
        out["fit_istar"] = _fit_istar(ck, sec)
    ck.done()
    return out


def _noise(ck: _Checker, sec, sub):
    res = {
        "t_hot": ck.number(sec, "noise", "t_hot", positive=True),
        "t_cold": ck.number(sec, "noise", "t_cold", positive=True),
        "n_hemt": ck.number(sec, "noise", "n_hemt", required=False, minimum=0.0),
        "g_hemt_db": ck.number(sec, "noise", "g_hemt_db", required=False, default=0.0),
        "smooth": ck.number(sec, "noise", "smooth", required=False, integer=True, minimum=1),
    }
    if None not in (res["t_hot"], res["t_cold"]) and not res["t_hot"] > res["t_cold"]:
        ck.problems.append("noise: t_hot must exceed t_cold")
    if sub == "extract":
        for key in ("hot", "cold", "pump_off", "bypass", "gain"):
            res[key] = ck.path(sec, "noise", key)
        for key in ("hot_off", "cold_off"):
            res[key] = ck.path(sec, "noise", key, required=False)
        if (res["hot_off"] is None or res["cold_off"] is None) and res["n_hemt"] is None:
            ck.problems.append("noise: set n_hemt or provide both hot_off and cold_off traces")
    elif sub == "hemt":
        for key in ("hot_off", "cold_off", "pump_off", "bypass"):
            res[key] = ck.path(sec, "noise", key)
    elif sub == "synth":
        syn = sec.get("synth") if sec else None
        if not isinstance(syn, dict):
            ck.problems.append("noise.synth: section is missing")
        else:
            w = "noise.synth"
            res["synth"] = {
                "n_a": ck.number(syn, w, "n_a"),
                "n_hemt": ck.number(syn, w, "n_hemt", minimum=0.0),
                "loss_db": ck.number(syn, w, "loss_db", minimum=0.0),
                "gain_db": ck.number(syn, w, "gain_db"),
                "g_hemt_db": ck.number(syn, w, "g_hemt_db", required=False, default=38.0),
                "g_w_db": ck.number(syn, w, "g_w_db", required=False, default=0.0),
                "n_w": ck.number(syn, w, "n_w", required=False, default=0.0, minimum=0.0),
                "f_min": ck.number(syn, w, "f_min", positive=True),
                "f_max": ck.number(syn, w, "f_max", positive=True),
                "points": ck.number(syn, w, "points", integer=True, minimum=2),
                "seed": ck.number(syn, w, "seed", required=False, default=0, integer=True),
                "noise": ck.number(syn, w, "noise", required=False, default=0.0, minimum=0.0),
            }
    return res


def _fit_istar(ck: _Checker, sec):
    if sec is None:
        return None
    if sec.get("data") is not None:
        data = sec["data"]
        ok = isinstance(data, list) and all(isinstance(r, (list, tuple)) and len(r) == 2 and
                                            all(isinstance(x, (int, float)) for x in r) for r in data)
        if not ok:
            ck.problems.append("fit_istar.data: expected a list of [i_dc_A, f_center_Hz] pairs")
            return None
        return {"data": [tuple(map(float, r)) for r in data], "file": None}
    p = ck.path(sec, "fit_istar", "file")
    return {"data": None, "file": p}
