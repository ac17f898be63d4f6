"""Acceptance criteria 1-11, each checked at its stated tolerance.

Every test records a one-line verdict that the terminal summary prints.
"""

import math
import time

import numpy as np

from kitwpa.config import PRESETS
from kitwpa.fwm import (RippleModel, build_tone_set, closed_form_gain, compression_sweep, coupling_constants,
                        gain_curve, propagate, pump_for_gain, ripple_period, ripple_s21, measured_ripple_period,
                        signal_gain)
from kitwpa.errors import OscillationError
from kitwpa.linemodel import C0, FilmLine, StubPattern, calibrate_loaded_line, supercell_bloch, telegrapher_params
from kitwpa.noisecal import NoiseChain, added_noise, extract_from_synth, occupation, synth_measurement
from kitwpa.phasematch import PumpConfig, dbm_from_current, delta_beta, predict_bands

from conftest import F_PUMP, I_STAR, _drifts, record_acceptance

PRESET = PRESETS["nbtin-4to8"]


def _runs(mask):
    """(start, stop) index pairs of the True runs in a boolean array."""
    d = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def test_criterion_01_telegrapher():
    t0 = time.perf_counter()
    z, v = telegrapher_params(FilmLine(16.64e-6, 6.45e-9, 3.2e-3, 0.1))
    dt = time.perf_counter() - t0
    ok = abs(z - 50) <= 0.02 * 50 and abs(v / C0 - 0.010) <= 0.05 * 0.010 and dt < 1
    record_acceptance(1, ok, f"Z = {z:.3f} ohm, v = {v / C0:.5f} c, {dt * 1e3:.2f} ms")
    assert ok


def test_criterion_02_bandgap():
    d = PRESET["device"]
    p = d["pattern"]
    t0 = time.perf_counter()
    pattern = StubPattern(p["pitch"], p["stub_avg"], p["stub_mod"], p["mod_period"])
    line = calibrate_loaded_line(FilmLine(d["l_per_m"], d["c_per_m"], d["i_star"], d["length"]), pattern)
    table = supercell_bloch(line, pattern, np.arange(0.1e9, 45e9 + 1, 1e6))
    dt = time.perf_counter() - t0
    lo, hi = table.stopbands[0]
    centre = (lo + hi) / 2
    ok = abs(centre - 12.5e9) <= 0.02 * 12.5e9 and dt < 10
    record_acceptance(2, ok, f"first stopband {lo / 1e9:.3f}-{hi / 1e9:.3f} GHz, centre {centre / 1e9:.3f} GHz, {dt:.2f} s")
    assert ok


def test_criterion_03_idler_notch(table):
    t0 = time.perf_counter()
    bands = predict_bands(table, PumpConfig(F_PUMP, 0.119 * I_STAR), I_STAR)
    dt = time.perf_counter() - t0
    f = bands.idler_gap_freq
    ok = abs(f - 8.7e9) <= 0.1e9 and dt < 1
    record_acceptance(3, ok, f"idler notch at {f / 1e9:.3f} GHz, {dt:.2f} s")
    assert ok


def test_criterion_04_gain_structure(line, table):
    freqs = np.linspace(2e9, 19e9, 500)
    t0 = time.perf_counter()
    curve = gain_curve(line, table, PumpConfig(F_PUMP, 0.119 * I_STAR), freqs, "six_tone")
    dt = time.perf_counter() - t0
    g = np.nan_to_num(curve.gain_db, nan=0.0)
    peak = float(g.max())
    regions = [(freqs[a], freqs[b - 1]) for a, b in _runs(g > 3.0)]
    notches = [(freqs[a], freqs[b - 1]) for a, b in _runs(curve.gain_db == 0.0)]

    def notch_at(f0):
        # A zero-gain run containing f0, or with f0 inside the grid step around it.
        step = freqs[1] - freqs[0]
        return any(lo - step <= f0 <= hi + step for lo, hi in notches)

    three = (len(regions) == 3 and regions[0][1] < 8.7e9 < regions[1][0]
             and regions[1][1] < 12.5e9 < regions[2][0])
    ok = peak > 20 and three and notch_at(8.7e9) and notch_at(12.5e9) and dt < 60
    desc = ", ".join(f"{a / 1e9:.2f}-{b / 1e9:.2f}" for a, b in regions)
    record_acceptance(4, ok, f"peak {peak:.2f} dB, gain regions [{desc}] GHz, {dt:.1f} s")
    assert ok


def test_criterion_05_cme_oracle(line, table):
    pump = PumpConfig(F_PUMP, 0.119 * I_STAR)
    lo, hi = predict_bands(table, pump, I_STAR).signal_band
    freqs = np.random.default_rng(2024).uniform(lo, hi, 100)
    t0 = time.perf_counter()
    worst = 0.0
    for fs in freqs:
        ode, _ = signal_gain(line, table, pump, fs, "three_tone")
        gp, gs, gi = coupling_constants(build_tone_set(F_PUMP, fs, table, "three_tone"), I_STAR)
        ref = 10 * math.log10(closed_form_gain(delta_beta(table, fs, F_PUMP), gp, gs, gi, pump.i_pump, line.total_length))
        worst = max(worst, abs(ode - ref))
    dt = time.perf_counter() - t0
    ok = worst <= 0.05 and dt < 30
    record_acceptance(5, ok, f"worst |ODE - closed form| = {worst:.2e} dB over 100 points, {dt:.1f} s")
    assert ok


def test_criterion_06_conservation(line, table):
    """Dedicated battery; the full-suite audit in test_zz_conservation_audit extends it to every integration."""
    pump_i = 0.119 * I_STAR
    worst_e = worst_m = 0.0
    cases = [(fs, mode, p_dbm) for fs in (4.5e9, 6e9, 7.1e9, 9.8e9, 14e9)
             for mode in ("three_tone", "six_tone") for p_dbm in (-90.0, -40.0)]
    for fs, mode, p_dbm in cases:
        amp = math.sqrt(1e-3 * 10 ** (p_dbm / 10) / 50)
        ts = build_tone_set(F_PUMP, fs, table, mode, pump_i, amp, warn=False)
        traj = propagate(ts, line, z_eval=np.linspace(0, line.total_length, 201))
        e, m = _drifts(ts.labels, ts.freqs, traj.amps)
        worst_e, worst_m = max(worst_e, e), max(worst_m, m)
    ok = worst_e < 1e-8 and worst_m < 1e-8
    record_acceptance(6, ok, f"{len(cases)} runs: worst energy drift {worst_e:.1e}, Manley-Rowe {worst_m:.1e}")
    assert ok


def test_criterion_07_compression(line, table):
    comp = PRESET["compression"]
    t0 = time.perf_counter()
    pump = pump_for_gain(line, table, F_PUMP, comp["f_signal"], comp["target_gain_db"], "six_tone")
    p_in = np.arange(comp["p_in_min"], comp["p_in_max"] + 0.5, comp["p_in_step"])
    cr = compression_sweep(line, table, pump, comp["f_signal"], p_in, "six_tone")
    dt = time.perf_counter() - t0
    p_pump = dbm_from_current(pump.i_pump)
    offset = None if cr.p1db_out is None else cr.p1db_out - p_pump
    ok = offset is not None and abs(offset - (-20.0)) <= 3.0 and dt < 120
    shown = "not reached" if offset is None else f"{cr.p1db_out:.2f} dBm, P1dB_out - P_pump = {offset:.2f} dB"
    record_acceptance(7, ok, f"G0 = {cr.small_signal_gain_db:.2f} dB, pump {p_pump:.2f} dBm, "
                             f"P1dB_out {shown} (target -20 +/- 3), {dt:.1f} s")
    assert ok


def test_criterion_08_ripple(line):
    r, g = 0.1, 10 ** (15 / 20)
    model = RippleModel(r, math.sqrt(1 - r**2), g, 0.1, line.target_vph)
    trace = ripple_s21(model, np.arange(6e9, 6.2e9, 1e5), "round_trip")
    period = measured_ripple_period(trace)
    ok_period = abs(period - 15e6) <= 1e6 and abs(ripple_period(model, "round_trip") - 15e6) <= 1e6

    def raises(gain):
        try:
            ripple_s21(RippleModel(r, math.sqrt(1 - r**2), gain, 0.1, line.target_vph), [6e9], "as_printed")
        except OscillationError:
            return True
        return False

    threshold = r**-2
    below = [threshold * (1 - 1e-12), threshold * 0.999, threshold / 2]
    at_or_above = [threshold, threshold * (1 + 1e-12), threshold * 2]
    ok_threshold = not any(raises(x) for x in below) and all(raises(x) for x in at_or_above)
    ok = ok_period and ok_threshold
    record_acceptance(8, ok, f"round-trip ripple period {period / 1e6:.3f} MHz; "
                             f"as-printed raises exactly for r^2 g >= 1: {ok_threshold}")
    assert ok


def test_criterion_09_noise_round_trip():
    s = PRESET["noise"]["synth"]
    loss = 10 ** (-s["loss_db"] / 10)
    chain = NoiseChain(loss, loss, 10 ** (s["gain_db"] / 10), 0.7, 10 ** (s["g_hemt_db"] / 10), 13.0)
    f = np.linspace(4e9, 8e9, 401)
    t0 = time.perf_counter()
    clean = extract_from_synth(synth_measurement(chain, f), chain)
    err = float(np.max(np.abs(clean.n_a - 0.7)))
    means = [np.nanmean(extract_from_synth(synth_measurement(chain, f, seed=k, noise=0.01), chain).n_a)
             for k in range(100)]
    bias = float(np.mean(means) - 0.7)
    dt = time.perf_counter() - t0
    ok = err <= 1e-6 and abs(bias) <= 0.05 and dt < 10
    record_acceptance(9, ok, f"noiseless error {err:.1e} quanta, 1% noise bias {bias:+.4f} quanta over 100 seeds, {dt:.2f} s")
    assert ok


def test_criterion_10_occupation():
    hot, cold = occupation(3.18, 6e9), occupation(0.02, 6e9)
    ok = abs(hot - 11.06) <= 0.01 and abs(cold - 0.500) <= 0.001
    record_acceptance(10, ok, f"N(3.18 K) = {hot:.4f}, N(20 mK) = {cold:.6f}")
    assert ok


def test_criterion_11_added_noise_plausibility():
    n_sys = np.linspace(1.0, 3.0, 41)
    loss_db = np.linspace(0.9, 1.1, 5)
    values = []
    for ldb in loss_db:
        lf = 10 ** (-ldb / 10)
        chain = NoiseChain(lf, lf, 10 ** 1.5, 0.0, 1e4, 13.0)
        values.append(added_noise(n_sys, chain, warn=False))
    values = np.array(values)
    lo, hi = float(values.min()), float(values.max())
    at_1db = values[loss_db.size // 2]
    ok = lo >= 0.3 and hi <= 1.7
    record_acceptance(11, ok, f"N_A spans [{lo:.3f}, {hi:.3f}] for N_sys in [1, 3], loss 0.9-1.1 dB "
                              f"([{at_1db.min():.3f}, {at_1db.max():.3f}] at 1 dB); required within [0.3, 1.7]")
    assert ok
