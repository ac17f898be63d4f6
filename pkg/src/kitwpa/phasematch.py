"""Four-wave-mixing phase matching and gain-band prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, EvanescentToneError
from .linemodel import DispersionTable

Z_REF = 50.0


def current_from_dbm(p_dbm: float, z0: float = Z_REF) -> float:
    """RMS line current carrying ``p_dbm`` into a ``z0`` line."""
    return math.sqrt(1e-3 * 10 ** (p_dbm / 10) / z0)


def dbm_from_current(i_rms: float, z0: float = Z_REF) -> float:
    return 10 * math.log10(i_rms**2 * z0 / 1e-3)


@dataclass(frozen=True)
class PumpConfig:
    """Pump tone.  ``i_pump`` is the RMS current on the line in amperes."""

    f_pump: float
    i_pump: float
    p_pump_dbm: float | None = None

    def __post_init__(self):
        if not self.f_pump > 0:
            raise DomainError("pump frequency must be positive")
        if self.i_pump < 0:
            raise DomainError("pump current must be non-negative")

    @classmethod
    def from_dbm(cls, f_pump: float, p_dbm: float, z0: float = Z_REF) -> PumpConfig:
        return cls(f_pump, current_from_dbm(p_dbm, z0), p_dbm)

    def validate(self, table: DispersionTable, i_star: float) -> None:
        if not self.i_pump < i_star:
            raise DomainError(f"pump current {self.i_pump:.4g} A must stay below I* = {i_star:.4g} A")
        if table.in_stopband(self.f_pump):
            raise EvanescentToneError(f"pump at {self.f_pump:.9g} Hz lies in a stopband", tone="p", freq=self.f_pump)


@dataclass(frozen=True)
class BandPrediction:
    """Predicted gain bands (Hz).  Bands are ``None`` when empty.

    ``signal_band`` is where the parametric gain grows exponentially,
    ``|residual| <= coupling``; ``matched_freqs`` lists exact zeros of the
    matching residual below the pump.
    """

    signal_band: tuple[float, float] | None
    idler_band: tuple[float, float] | None
    idler_gap_freq: float | None
    around_pump_band: tuple[float, float] | None
    matched_freqs: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "signal_band_hz": list(self.signal_band) if self.signal_band else None,
            "idler_band_hz": list(self.idler_band) if self.idler_band else None,
            "idler_gap_freq_hz": self.idler_gap_freq,
            "around_pump_band_hz": list(self.around_pump_band) if self.around_pump_band else None,
            "phase_matched_hz": list(self.matched_freqs),
        }


def idler_freq(f_pump: float, f_signal: float) -> float:
    """Idler of degenerate 4WM: ``2 f_pump - f_signal``."""
    if not f_signal > 0:
        raise DomainError("signal frequency must be positive")
    f_i = 2 * f_pump - f_signal
    if f_i <= 0:
        raise DomainError(f"idler frequency {f_i:.9g} Hz is not positive")
    return f_i


def delta_beta(table: DispersionTable, f_signal, f_pump: float):
    """Linear phase mismatch ``k_s + k_i - 2 k_p`` in rad/m."""
    k_p = table.k_real(f_pump, "p")
    f_s = np.asarray(f_signal, dtype=float)
    f_i = 2 * f_pump - f_s
    if np.any(f_s <= 0) or np.any(f_i <= 0):
        raise DomainError("signal and idler frequencies must be positive")
    k_s = table.k_real(f_s, "s")
    k_i = table.k_real(f_i, "i")
    return k_s + k_i - 2 * k_p


def nonlinear_mismatch(table: DispersionTable, pump: PumpConfig, i_star: float) -> float:
    """Pump-induced mismatch ``k_p I_p^2 / (4 I*^2)``."""
    return table.k_real(pump.f_pump, "p") * pump.i_pump**2 / (4 * i_star**2)


def matching_residual(table: DispersionTable, f_signal, pump: PumpConfig, i_star: float):
    """``delta_beta + k_p I_p^2 / (4 I*^2)``; zeros are phase-matched signals."""
    return delta_beta(table, f_signal, pump.f_pump) + nonlinear_mismatch(table, pump, i_star)


def _valid_signal_mask(table: DispersionTable, f_s: np.ndarray, f_pump: float) -> np.ndarray:
    f_i = 2 * f_pump - f_s
    inside = (f_s >= table.freq_grid[0]) & (f_i <= table.freq_grid[-1]) & (f_i >= table.freq_grid[0])
    return inside & ~table.in_stopband(f_s) & ~table.in_stopband(f_i)


def _segments(mask):
    start = None
    for i, ok in enumerate(np.append(mask, False)):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            yield start, i
            start = None


def _roots(func, f, values, tol):
    roots = []
    for j in range(f.size - 1):
        a, b = values[j], values[j + 1]
        if a == 0:
            roots.append(float(f[j]))
        elif a * b < 0:
            roots.append(brentq(func, f[j], f[j + 1], xtol=tol))
    if values.size and values[-1] == 0:
        roots.append(float(f[-1]))
    return roots


def predict_bands(table: DispersionTable, pump: PumpConfig, i_star: float, step: float = 1e6, tol: float = 1e3) -> BandPrediction:
    """Locate gain bands below the pump and mirror them to the idler side.

    The signal-frequency scan runs on a ``step`` grid and roots are refined to
    ``tol`` by bracketed bisection.  The coupling that bounds exponential gain
    is ``k_p I_p^2 / (4 I*^2) * sqrt(f_s f_i) / f_p``.
    """
    pump.validate(table, i_star)
    f_p = pump.f_pump
    nl = nonlinear_mismatch(table, pump, i_star)

    gap = table.stopband_above(f_p)
    idler_gap = 2 * f_p - 0.5 * (gap[0] + gap[1]) if gap else None

    f_lo = max(table.freq_grid[0], 2 * f_p - table.freq_grid[-1])
    scan = np.arange(math.ceil(f_lo / step) * step, f_p, step)
    scan = scan[scan < f_p]
    valid = _valid_signal_mask(table, scan, f_p)

    def residual(fs):
        return float(matching_residual(table, fs, pump, i_star))

    def excess(fs):
        coupling = nl * math.sqrt(fs * (2 * f_p - fs)) / f_p
        return abs(residual(fs)) - coupling

    zeros: list[float] = []
    edges: list[tuple[float, float]] = []
    for a, b in _segments(valid):
        f_seg = scan[a:b]
        if f_seg.size < 2:
            continue
        res = np.asarray(matching_residual(table, f_seg, pump, i_star))
        zeros.extend(_roots(residual, f_seg, res, tol))
        coupling = nl * np.sqrt(f_seg * (2 * f_p - f_seg)) / f_p
        exc = np.abs(res) - coupling
        inside = exc <= 0
        crossings = _roots(excess, f_seg, exc, tol)
        for s, e in _segments(inside):
            lo = f_seg[s] if s == 0 else max((c for c in crossings if c <= f_seg[s]), default=f_seg[s])
            hi = f_seg[e - 1] if e == f_seg.size else min((c for c in crossings if c >= f_seg[e - 1]), default=f_seg[e - 1])
            edges.append((float(lo), float(hi)))

    notch_hi = 2 * f_p - gap[0] if gap else f_p
    notch_lo = 2 * f_p - gap[1] if gap else f_p
    below = [e for e in edges if e[1] <= notch_lo]
    signal = (min(e[0] for e in below), max(e[1] for e in below)) if below else None
    idler = (2 * f_p - signal[1], 2 * f_p - signal[0]) if signal else None

    # Around-pump band: between the innermost zeros; without them, between
    # the idler-notch image and the stopband edge, where both tones propagate.
    inner = [z for z in zeros if z >= notch_hi]
    if inner:
        z = max(inner)
        around = (z, 2 * f_p - z)
    elif gap:
        around = (notch_hi, gap[0])
    else:
        around = None
    return BandPrediction(signal, idler, idler_gap, around, sorted(zeros))
