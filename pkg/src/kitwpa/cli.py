"""Command-line driver: ``kitwpa <command> [--preset NAME] [--config FILE] [--out-dir DIR]``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import load_config, validate
from .errors import AlignmentError, ConfigError, KitwpaError, TraceFormatError
from .fwm import RIPPLE_CONVENTIONS, RippleModel, compression_sweep, gain_curve, measured_ripple_period, pump_for_gain, ripple_period, ripple_s21
from .linemodel import calibrate_loaded_line, fit_istar, supercell_bloch, telegrapher_params
from .noisecal import NoiseChain, extract, hemt_noise_from_yfactor, deembed_loss, quanta_to_kelvin, synth_measurement
from .phasematch import PumpConfig, dbm_from_current, predict_bands
from .traceio import ingest_trace, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
TABLE_STEP = 1e6
TABLE_F_MIN = 0.1e9


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if np.isnan(x):
        return "nan"
    return format(x, ".9g")


def _write_csv(path: Path, header: list[str], columns: list, freq_first: bool = True) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            cells = [str(int(round(row[0])))] + [_fmt(v) for v in row[1:]] if freq_first else [_fmt(v) for v in row]
            fh.write(",".join(cells) + "\n")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects outputs, inputs and warnings for the manifest."""

    def __init__(self, out_dir: Path, command: str, cfg: dict, argv: list[str]):
        self.out_dir = out_dir
        self.command = command
        self.cfg = cfg
        self.argv = argv
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(p)
        return p

    def manifest(self, started: float, caught) -> Path:
        cfg = {k: v for k, v in self.cfg.items() if not k.startswith("_")}
        data = {
            "toolkit": "kitwpa",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config": cfg,
            "inputs": {str(p): _sha256(p) for p in self.inputs},
            "outputs": {p.name: _sha256(p) for p in self.outputs},
            "duration_s": round(time.perf_counter() - started, 6),
            "warnings": [f"{w.category.__name__}: {w.message}" for w in caught],
            **self.extra,
        }
        name = self.command.replace(" ", "_") + "_manifest.json"
        path = self.out_dir / name
        _write_json(path, data)
        return path


def _loaded_device(line, pattern, f_max):
    """Calibrated line and its dispersion table up to ``f_max``."""
    cal = calibrate_loaded_line(line, pattern) if pattern is not None else line
    grid = np.arange(TABLE_F_MIN, f_max + TABLE_STEP / 2, TABLE_STEP)
    return cal, supercell_bloch(cal, pattern, grid)


def _table_top(f_pumps, extra=0.0):
    return 4 * max(f_pumps) + max(2e9, extra)


def cmd_dispersion(run: Run, res: dict, args) -> None:
    line, pattern, g = res["line"], res["pattern"], res["grid"]
    cal = calibrate_loaded_line(line, pattern) if pattern is not None else line
    grid = np.arange(g["f_min"], g["f_max"] + g["step"] / 2, g["step"])
    table = supercell_bloch(cal, pattern, grid)
    table.to_csv(run.path("dispersion.csv"))
    z0, v = telegrapher_params(cal)
    _write_json(run.path("stopbands.json"), {
        "stopbands_hz": [list(b) for b in table.stopbands],
        "centers_hz": [(lo + hi) / 2 for lo, hi in table.stopbands],
        "z0_ohm": z0,
        "v_ph_m_per_s": v,
        "v_ph_over_c": v / 299792458.0,
        "v_eff_m_per_s": table.v_eff,
        "supercell_m": table.period,
    })


def _pump_list(res, args):
    pump = res["pump"]
    if args.pump_sweep is None:
        return [pump]
    if args.pump_sweep == "config":
        freqs = res["sweep"]["pump_freqs"]
        if not freqs:
            raise ConfigError(["sweep.pump_freqs: required by --pump-sweep without values"])
    else:
        try:
            freqs = [float(x) for x in args.pump_sweep.split(",") if x.strip()]
        except ValueError:
            raise ConfigError([f"--pump-sweep: cannot parse {args.pump_sweep!r}"]) from None
        if not freqs or any(f <= 0 for f in freqs):
            raise ConfigError(["--pump-sweep: expected positive frequencies in Hz"])
    return [PumpConfig(f, pump.i_pump, pump.p_pump_dbm) for f in freqs]


def cmd_bands(run: Run, res: dict, args) -> None:
    line, pattern, pump = res["line"], res["pattern"], res["pump"]
    cal, table = _loaded_device(line, pattern, _table_top([pump.f_pump]))
    bands = predict_bands(table, pump, cal.i_star)
    _write_json(run.path("bands.json"), {
        "pump": {"f_pump_hz": pump.f_pump, "i_pump_a": pump.i_pump, "p_pump_dbm": pump.p_pump_dbm},
        "i_star_a": cal.i_star,
        **bands.to_dict(),
    })


def cmd_gain(run: Run, res: dict, args) -> None:
    line, pattern, sweep = res["line"], res["pattern"], res["sweep"]
    mode = args.mode or sweep["mode"]
    pumps = res["pumps"]
    cal, table = _loaded_device(line, pattern, _table_top([p.f_pump for p in pumps], sweep["f_max"]))
    freqs = np.linspace(sweep["f_min"], sweep["f_max"], sweep["points"])
    summary = []
    for pump in pumps:
        curve = gain_curve(cal, table, pump, freqs, mode, sweep["probe_dbm"])
        name = "gain.csv" if len(pumps) == 1 else f"gain_fp{int(round(pump.f_pump))}.csv"
        _write_csv(run.path(name), ["f_Hz", "gain_dB", "idler_gain_dB"], [curve.freq_grid, curve.gain_db, curve.idler_gain_db])
        bands = predict_bands(table, pump, cal.i_star)
        finite = np.nan_to_num(curve.gain_db, nan=-np.inf)
        summary.append({"file": name, "f_pump_hz": pump.f_pump, "i_pump_a": pump.i_pump, "mode": mode,
                        "peak_gain_db": float(finite.max()), "f_peak_hz": float(freqs[int(finite.argmax())]),
                        **bands.to_dict()})
    _write_json(run.path("gain_summary.json"), {"curves": summary})


def cmd_compress(run: Run, res: dict, args) -> None:
    line, pattern, comp = res["line"], res["pattern"], res["compression"]
    mode = args.mode or comp["mode"]
    pump = res["pump"]
    cal, table = _loaded_device(line, pattern, _table_top([pump.f_pump]))
    if comp["target_gain_db"] is not None:
        pump = pump_for_gain(cal, table, pump.f_pump, comp["f_signal"], comp["target_gain_db"], mode)
    p_in = np.arange(comp["p_in_min"], comp["p_in_max"] + comp["p_in_step"] / 2, comp["p_in_step"])
    cr = compression_sweep(cal, table, pump, comp["f_signal"], p_in, mode)
    _write_csv(run.path("compression.csv"), ["p_in_dBm", "p_out_dBm", "gain_dB"],
               [cr.p_in_dbm, cr.p_out_dbm, cr.gain_db], freq_first=False)
    p_pump = dbm_from_current(pump.i_pump)
    _write_json(run.path("compression.json"), {
        "f_signal_hz": comp["f_signal"], "f_pump_hz": pump.f_pump, "i_pump_a": pump.i_pump,
        "p_pump_dbm": p_pump, "mode": mode, "small_signal_gain_db": cr.small_signal_gain_db,
        "p1db_in_dbm": cr.p1db_in, "p1db_out_dbm": cr.p1db_out,
        "p1db_out_minus_pump_db": None if cr.p1db_out is None else cr.p1db_out - p_pump,
    })


def cmd_ripple(run: Run, res: dict, args) -> None:
    line, pattern, rp = res["line"], res["pattern"], res["ripple"]
    conv = RIPPLE_CONVENTIONS[args.ripple_convention or rp["convention"]]
    cal = calibrate_loaded_line(line, pattern) if pattern is not None else line
    v = cal.target_vph
    t = rp["t"] if rp["t"] is not None else float(np.sqrt(1 - rp["r"] ** 2))
    model = RippleModel(rp["r"], t, 10 ** (rp["gain_db"] / 20), rp["length"] or cal.total_length, v)
    freqs = np.arange(rp["f_min"], rp["f_max"] + rp["step"] / 2, rp["step"])
    trace = ripple_s21(model, freqs, conv)
    _write_csv(run.path("ripple.csv"), ["f_Hz", "s21_dB"], [trace.freq_grid, trace.values])
    try:
        measured = measured_ripple_period(trace)
    except KitwpaError:
        measured = None
    _write_json(run.path("ripple.json"), {"convention": conv, "r": model.r, "t": model.t, "g": model.g,
                                          "length_m": model.length, "v_ph_m_per_s": v,
                                          "period_hz": ripple_period(model, conv), "measured_period_hz": measured})


def _ingest(run: Run, path, unit=None, state=None):
    run.inputs.append(Path(path))
    return ingest_trace(path, unit, state)


def cmd_noise(run: Run, res: dict, args) -> None:
    nz = res["noise"]
    sub = args.noise_command
    if sub == "synth":
        s = nz["synth"]
        f = np.linspace(s["f_min"], s["f_max"], s["points"])
        loss = 10 ** (-s["loss_db"] / 10)
        chain = NoiseChain(loss, loss, 10 ** (s["gain_db"] / 10), s["n_a"], 10 ** (s["g_hemt_db"] / 10), s["n_hemt"],
                           g_w=10 ** (s["g_w_db"] / 10), n_w=s["n_w"], t_hot=nz["t_hot"], t_cold=nz["t_cold"])
        traces = synth_measurement(chain, f, seed=s["seed"], noise=s["noise"])
        for name, tr in traces.items():
            write_trace(tr, run.path(f"synth_{name}.csv"))
        cfg = {"noise": {"t_hot": nz["t_hot"], "t_cold": nz["t_cold"], "g_hemt_db": s["g_hemt_db"],
                         **{k: f"synth_{k}.csv" for k in traces}}}
        run.path("noise_config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
        return
    # Ingest every trace before any arithmetic.
    if sub == "extract":
        tr = {k: _ingest(run, nz[k], None, None) for k in ("hot", "cold", "pump_off", "bypass", "gain")}
        for k in ("hot_off", "cold_off"):
            tr[k] = _ingest(run, nz[k]) if nz.get(k) else None
        ex = extract(tr["hot"], tr["cold"], tr["pump_off"], tr["bypass"], tr["gain"], nz["t_hot"], nz["t_cold"],
                     n_hemt=nz["n_hemt"], hot_off=tr["hot_off"], cold_off=tr["cold_off"],
                     g_hemt=10 ** (nz["g_hemt_db"] / 10), smooth=nz["smooth"])
        cols = ex.columns()
        _write_csv(run.path("noise_extract.csv"), ["f_Hz", *cols, "invalid"],
                   [ex.freq_grid, *cols.values(), ex.invalid.astype(int)])
        valid = ~ex.invalid
        _write_json(run.path("noise_summary.json"), {
            "bins": int(ex.freq_grid.size), "invalid_bins": int(ex.invalid.sum()),
            "below_vacuum_bins": int(ex.below_vacuum.sum()),
            "n_a_mean": float(np.mean(ex.n_a[valid])) if valid.any() else None,
            "n_sys_mean": float(np.mean(ex.n_sys[valid])) if valid.any() else None,
            "n_hemt_mean": float(np.nanmean(ex.n_hemt)) if valid.any() else None,
            "notes": ex.notes,
        })
    elif sub == "hemt":
        tr = {k: _ingest(run, nz[k]) for k in ("hot_off", "cold_off", "pump_off", "bypass")}
        loss = deembed_loss(tr["bypass"], tr["pump_off"])
        chain = NoiseChain(loss.factor, loss.factor, 1.0, 0.0, 10 ** (nz["g_hemt_db"] / 10), 0.0,
                           t_hot=nz["t_hot"], t_cold=nz["t_cold"])
        h = hemt_noise_from_yfactor(tr["hot_off"], tr["cold_off"], chain)
        f = tr["hot_off"].freq_grid
        _write_csv(run.path("hemt.csv"), ["f_Hz", "y", "n_sys_off", "n_hemt", "t_hemt_K", "invalid"],
                   [f, h.y, h.n_sys_off, h.n_hemt, quanta_to_kelvin(h.n_hemt, f), h.invalid.astype(int)])


def cmd_fit_istar(run: Run, res: dict, args) -> None:
    fit_cfg = res["fit_istar"]
    if fit_cfg["data"] is not None:
        data = fit_cfg["data"]
    else:
        run.inputs.append(fit_cfg["file"])
        try:
            arr = np.loadtxt(fit_cfg["file"], delimiter=",", skiprows=1, ndmin=2)
        except ValueError as exc:
            raise TraceFormatError(f"{fit_cfg['file']}: {exc}") from exc
        data = [tuple(r) for r in arr[:, :2]]
    fit = fit_istar(data)
    _write_json(run.path("istar.json"), {"i_star_a": fit.i_star if np.isfinite(fit.i_star) else None,
                                         "f0_hz": fit.f0, "rms_residual_hz": fit.residual,
                                         "diagnostic": fit.diagnostic, "points": len(data)})


COMMANDS = {
    "dispersion": cmd_dispersion,
    "bands": cmd_bands,
    "gain": cmd_gain,
    "compress": cmd_compress,
    "ripple": cmd_ripple,
    "noise": cmd_noise,
    "fit-istar": cmd_fit_istar,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--preset", help="named device preset (nbtin-4to8, nbtin-4to8-122)")
    common.add_argument("--out-dir", default=".", help="directory for outputs (created if needed)")

    parser = argparse.ArgumentParser(prog="kitwpa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kitwpa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("dispersion", parents=[common], help="Bloch dispersion table and stopbands")
    sub.add_parser("bands", parents=[common], help="phase-matched gain bands")
    g = sub.add_parser("gain", parents=[common], help="small-signal gain curve(s)")
    g.add_argument("--pump-sweep", nargs="?", const="config", default=None,
                   help="comma-separated pump frequencies in Hz (default: sweep.pump_freqs)")
    g.add_argument("--mode", choices=["three", "six"])
    c = sub.add_parser("compress", parents=[common], help="1 dB compression sweep")
    c.add_argument("--mode", choices=["three", "six"])
    r = sub.add_parser("ripple", parents=[common], help="reflection ripple on the gain")
    r.add_argument("--ripple-convention", choices=["printed", "roundtrip"])
    n = sub.add_parser("noise", help="noise calibration")
    nsub = n.add_subparsers(dest="noise_command", required=True)
    for name, text in (("extract", "added noise from measured traces"), ("synth", "synthetic traces"),
                       ("hemt", "HEMT noise from pump-off Y-factor")):
        nsub.add_parser(name, parents=[common], help=text)
    sub.add_parser("fit-istar", parents=[common], help="fit I* to stopband shifts")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    command = args.command
    label = f"noise {args.noise_command}" if command == "noise" else command
    started = time.perf_counter()
    try:
        if args.config is None and args.preset is None:
            raise ConfigError(["need --config, --preset or both"])
        cfg = load_config(args.config, args.preset)
        res = validate(cfg, command, getattr(args, "noise_command", None))
        if command == "gain":
            res["pumps"] = _pump_list(res, args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = Run(out_dir, label, copy.deepcopy(cfg), argv)
    if args.config:
        run.inputs.append(Path(args.config))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            COMMANDS[command](run, res, args)
        except ConfigError as exc:
            for p in exc.problems:
                print(f"config error: {p}", file=sys.stderr)
            return EXIT_CONFIG
        except (TraceFormatError, AlignmentError) as exc:
            print(f"input error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except KitwpaError as exc:
            print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    path = run.manifest(started, caught)
    for w in caught:
        print(f"warning: {w.category.__name__}: {w.message}", file=sys.stderr)
    print(f"wrote {len(run.outputs)} file(s) and {path.name} to {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
