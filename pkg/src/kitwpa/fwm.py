"""Coupled-mode equations for degenerate four-wave mixing on a Kerr-like line.

Tone amplitudes are complex RMS currents in amperes.  A tone's field along the
line is ``A_j(z) exp(-i k_j z)``; the solver evolves the slowly varying
envelopes ``A_j``.  Mixing terms are generated automatically from the tone
frequencies, so the three- and six-tone sets share one engine.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement, permutations
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import DegenerateToneError, DomainError, EvanescentToneError, EvanescentToneWarning, OscillationError, StiffnessError
from .linemodel import DispersionTable, FilmLine
from .phasematch import PumpConfig, current_from_dbm

FREQ_TOL = 1.0  # Hz
# 1e-11 keeps Manley-Rowe drift below 1e-8 even deep in the oscillatory high-pump regime.
RTOL = 1e-11
ATOL = 1e-16
MODES = {"three": "three_tone", "three_tone": "three_tone", "six": "six_tone", "six_tone": "six_tone"}
COUPLINGS = ("effective", "bloch")


def _mode(mode: str) -> str:
    try:
        return MODES[mode]
    except KeyError:
        raise DomainError(f"unknown tone-set mode {mode!r}") from None


@dataclass(frozen=True)
class Tone:
    label: str
    freq: float
    k: float
    amp: complex
    role: str
    evanescent: bool = False


@dataclass(frozen=True)
class ToneSet:
    """Propagating tones plus the ones dropped as evanescent.

    ``v_eff`` is the effective-medium velocity used for the nonlinear coupling.
    """

    tones: tuple[Tone, ...]
    dropped: tuple[Tone, ...] = ()
    mode: str = "three_tone"
    v_eff: float | None = None

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.tones]

    @property
    def freqs(self) -> np.ndarray:
        return np.array([t.freq for t in self.tones])

    @property
    def ks(self) -> np.ndarray:
        return np.array([t.k for t in self.tones])

    @property
    def amps(self) -> np.ndarray:
        return np.array([t.amp for t in self.tones], dtype=complex)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def has(self, label: str) -> bool:
        return label in self.labels

    def __getitem__(self, label: str) -> Tone:
        return self.tones[self.index(label)]

    def with_amps(self, amps) -> ToneSet:
        amps = np.asarray(amps, dtype=complex)
        if amps.shape != (len(self.tones),):
            raise DomainError("amplitude vector does not match the tone set")
        return replace(self, tones=tuple(replace(t, amp=complex(a)) for t, a in zip(self.tones, amps)))

    def with_amp(self, label: str, amp: complex) -> ToneSet:
        amps = self.amps
        amps[self.index(label)] = amp
        return self.with_amps(amps)


# (label, role, pump multiple, signal multiple)
_THREE = [("p", "pump", 1, 0), ("s", "signal", 0, 1), ("i", "idler", 2, -1)]
_SIX = _THREE + [("3p", "harmonic", 3, 0), ("2p+s", "harmonic", 2, 1), ("4p-s", "harmonic", 4, -1)]


def build_tone_set(f_pump: float, f_signal: float, table: DispersionTable, mode: str = "three_tone",
                   pump_amp: complex = 0.0, signal_amp: complex = 0.0, warn: bool = True) -> ToneSet:
    """Assemble the tones for one signal frequency.

    Idler and harmonics that fall in a stopband or outside the table are
    flagged evanescent and left out of propagation; an evanescent pump or
    signal is an error.
    """
    mode = _mode(mode)
    if not f_pump > 0 or not f_signal > 0:
        raise DomainError("pump and signal frequencies must be positive")
    layout = _THREE if mode == "three_tone" else _SIX
    freqs = [a * f_pump + b * f_signal for _, _, a, b in layout]
    if abs(f_signal - f_pump) <= FREQ_TOL:
        raise DegenerateToneError(f"signal at {f_signal:.9g} Hz coincides with the pump")
    for (la, fa), (lb, fb) in combinations_with_replacement(zip([s[0] for s in layout], freqs), 2):
        if la != lb and abs(fa - fb) <= FREQ_TOL:
            raise DegenerateToneError(f"tones {la!r} and {lb!r} coincide at {fa:.9g} Hz")
    if freqs[2] <= 0:
        raise DomainError(f"idler frequency {freqs[2]:.9g} Hz is not positive")

    kept, dropped = [], []
    for (label, role, _, _), f in zip(layout, freqs):
        amp = complex(pump_amp if label == "p" else signal_amp if label == "s" else 0.0)
        if f <= 0 or not table.covers(f) or table.in_stopband(f):
            if label in ("p", "s"):
                raise EvanescentToneError(f"{role} at {f:.9g} Hz cannot propagate", tone=label, freq=f)
            dropped.append(Tone(label, f, math.nan, 0j, role, evanescent=True))
            continue
        kept.append(Tone(label, f, table.k_real(f, label), amp, role))
    if warn and dropped:
        names = ", ".join(f"{t.label} ({t.freq:.6g} Hz)" for t in dropped)
        warnings.warn(f"dropped evanescent tones: {names}", EvanescentToneWarning, stacklevel=2)
    return ToneSet(tuple(kept), tuple(dropped), mode, table.v_eff)


class MixingTerm(NamedTuple):
    """``coef * prod(A or conj(A))`` contribution to tone ``target``.

    ``factors`` holds ``(index, conjugated)`` pairs.
    """

    target: int
    coef: float
    factors: tuple[tuple[int, bool], ...]


def mixing_terms(freqs, tol: float = FREQ_TOL) -> list[MixingTerm]:
    """Every frequency-matched cubic product feeding each tone.

    A product of three signed tones contributes to tone ``j`` when the signed
    frequencies sum to ``f_j``.  The coefficient is the number of distinct
    orderings divided by three, which gives 1 for self-phase modulation, 2
    for cross-phase modulation, 1 for ``A_a^2 A_b*`` and 2 for
    ``A_a A_b A_c*``.
    """
    freqs = np.asarray(freqs, dtype=float)
    n = freqs.size
    signed = [(i, False) for i in range(n)] + [(i, True) for i in range(n)]
    terms = []
    for j in range(n):
        for combo in combinations_with_replacement(signed, 3):
            total = sum(-freqs[i] if c else freqs[i] for i, c in combo)
            if abs(total - freqs[j]) > tol:
                continue
            orderings = len(set(permutations(combo)))
            terms.append(MixingTerm(j, orderings / 3, combo))
    return terms


class _Rhs:
    """Vectorised right-hand side for a fixed tone set."""

    def __init__(self, state: ToneSet, i_star: float, coupling: str = "effective"):
        if coupling not in COUPLINGS:
            raise DomainError(f"coupling must be one of {COUPLINGS}")
        self.n = len(state.tones)
        self.labels = state.labels
        self.coupling = coupling
        freqs, ks = state.freqs, state.ks
        self.freqs = freqs
        if coupling == "effective":
            if state.v_eff is None:
                raise DomainError("effective coupling needs the tone set's v_eff")
            kappa = 2 * np.pi * freqs / state.v_eff
        else:
            kappa = ks
        self.gamma = kappa / (8 * i_star**2)
        terms = mixing_terms(freqs)
        self.target = np.array([t.target for t in terms], dtype=int)
        self.coef = np.array([t.coef for t in terms])
        idx = np.array([[i + self.n * c for i, c in t.factors] for t in terms], dtype=int).reshape(-1, 3)
        self.i1, self.i2, self.i3 = idx.T
        sign = np.array([[-1.0 if c else 1.0 for _, c in t.factors] for t in terms]).reshape(-1, 3)
        kk = np.array([[ks[i] for i, _ in t.factors] for t in terms]).reshape(-1, 3)
        self.dk = (sign * kk).sum(axis=1) - ks[self.target]
        self.weight = -1j * self.gamma[self.target] * self.coef

    def __call__(self, z, a):
        b = np.concatenate([a, a.conj()])
        vals = self.weight * b[self.i1] * b[self.i2] * b[self.i3] * np.exp(-1j * self.dk * z)
        out = np.zeros(self.n, dtype=complex)
        np.add.at(out, self.target, vals)
        return out


def cme_rhs(state: ToneSet, i_star: float, z: float = 0.0, coupling: str = "effective") -> np.ndarray:
    """``dA/dz`` for every propagating tone at position ``z``."""
    return _Rhs(state, i_star, coupling)(z, state.amps)


def coupling_constants(state: ToneSet, i_star: float, coupling: str = "effective") -> np.ndarray:
    """Per-tone ``gamma_j = kappa_j / (8 I*^2)``."""
    return _Rhs(state, i_star, coupling).gamma


class Trajectory(NamedTuple):
    z: np.ndarray
    amps: np.ndarray  # shape (n_tones, n_z)
    state: ToneSet


def propagate(state: ToneSet, line: FilmLine, z_span: float | None = None, rtol: float = RTOL, atol: float = ATOL,
              z_eval=None, coupling: str = "effective") -> Trajectory:
    """Integrate the coupled-mode equations and keep the amplitudes along z."""
    if not rtol > 0 or not atol > 0:
        raise DomainError("tolerances must be positive")
    if z_span is None:
        z_span = line.total_length
    if not z_span > 0:
        raise DomainError("z_span must be positive")
    rhs = _Rhs(state, line.i_star, coupling)
    sol = solve_ivp(rhs, (0.0, z_span), state.amps, method="DOP853", rtol=rtol, atol=atol, t_eval=z_eval)
    if sol.status != 0:
        z_fail = float(sol.t[-1]) if sol.t.size else 0.0
        step = float(np.diff(sol.t)[-1]) if sol.t.size > 1 else float("nan")
        raise StiffnessError(f"integration stopped at z = {z_fail:.6g} m: {sol.message}", z=z_fail, step=step)
    return Trajectory(sol.t, sol.y, state.with_amps(sol.y[:, -1]))


def integrate(state: ToneSet, line: FilmLine, z_span: float | None = None, rtol: float = RTOL, atol: float = ATOL,
              coupling: str = "effective") -> ToneSet:
    """Final tone amplitudes after ``z_span`` metres (default: the whole line)."""
    return propagate(state, line, z_span, rtol, atol, coupling=coupling).state


def closed_form_gain(delta_beta: float, gamma_p: float, gamma_s: float, gamma_i: float, i_pump: float, length: float) -> float:
    """Undepleted-pump signal power gain (linear).

    ``g^2 = gamma_s gamma_i P^2 - (kappa/2)^2`` with
    ``kappa = delta_beta + 2 (gamma_s + gamma_i) P - 2 gamma_p P`` and
    ``P = |A_p|^2``.  For equal couplings this is the familiar
    ``kappa = delta_beta + 2 gamma P``.
    """
    P = i_pump**2
    c2 = gamma_s * gamma_i * P**2
    kappa = delta_beta + 2 * (gamma_s + gamma_i) * P - 2 * gamma_p * P
    g2 = c2 - kappa**2 / 4
    if g2 > 0:
        g = math.sqrt(g2)
        return 1 + c2 / g2 * math.sinh(g * length) ** 2
    if g2 < 0:
        g = math.sqrt(-g2)
        return 1 + c2 / -g2 * math.sin(g * length) ** 2
    return 1 + c2 * length**2


@dataclass
class GainCurve:
    freq_grid: np.ndarray
    gain_db: np.ndarray
    idler_gain_db: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("f_Hz,gain_dB,idler_gain_dB\n")
            for f, g, gi in zip(self.freq_grid, self.gain_db, self.idler_gain_db):
                fh.write(f"{int(round(f))},{g:.9g},{gi:.9g}\n")


def signal_gain(line: FilmLine, table: DispersionTable, pump: PumpConfig, f_signal: float, mode: str = "three_tone",
                probe_dbm: float = -90.0, coupling: str = "effective", rtol: float = RTOL) -> tuple[float, float]:
    """(signal gain, idler conversion) in dB for one signal frequency.

    An evanescent idler or signal gives ``(0, -inf)``; the degenerate point
    ``f_signal == f_pump`` gives NaN.
    """
    if abs(f_signal - pump.f_pump) <= FREQ_TOL:
        return math.nan, math.nan
    a_s = current_from_dbm(probe_dbm)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EvanescentToneWarning)
            tones = build_tone_set(pump.f_pump, f_signal, table, mode, pump.i_pump, a_s)
    except EvanescentToneError as exc:
        if exc.tone == "p":
            raise
        return 0.0, -math.inf
    except DomainError:
        return 0.0, -math.inf
    if not tones.has("i"):
        return 0.0, -math.inf
    out = integrate(tones, line, line.total_length, rtol=rtol, coupling=coupling)
    g = abs(out["s"].amp / a_s) ** 2
    gi = abs(out["i"].amp / a_s) ** 2
    return 10 * math.log10(g), (10 * math.log10(gi) if gi > 0 else -math.inf)


def gain_curve(line: FilmLine, table: DispersionTable, pump: PumpConfig, freq_grid, mode: str = "six_tone",
               probe_dbm: float = -90.0, coupling: str = "effective") -> GainCurve:
    """Small-signal gain over ``freq_grid``.  Points whose idler cannot propagate read 0 dB."""
    pump.validate(table, line.i_star)
    mode = _mode(mode)
    f = np.asarray(freq_grid, dtype=float)
    g = np.empty(f.shape)
    gi = np.empty(f.shape)
    for n, fs in enumerate(f):
        try:
            g[n], gi[n] = signal_gain(line, table, pump, fs, mode, probe_dbm, coupling)
        except StiffnessError as exc:
            raise StiffnessError(f"at f_signal = {fs:.9g} Hz: {exc}", z=exc.z, step=exc.step) from exc
    meta = {"f_pump_hz": pump.f_pump, "i_pump_a": pump.i_pump, "mode": mode, "probe_dbm": probe_dbm, "coupling": coupling}
    return GainCurve(f, g, gi, meta)


class CompressionResult(NamedTuple):
    p1db_in: float | None
    p1db_out: float | None
    small_signal_gain_db: float
    p_in_dbm: np.ndarray
    gain_db: np.ndarray

    @property
    def p_out_dbm(self) -> np.ndarray:
        return self.p_in_dbm + self.gain_db


def compression_sweep(line: FilmLine, table: DispersionTable, pump: PumpConfig, f_signal: float, p_in_grid,
                      mode: str = "three_tone", probe_dbm: float = -90.0, coupling: str = "effective") -> CompressionResult:
    """Gain versus signal input power with the pump free to deplete.

    ``p1db_in`` is the first input power (linearly interpolated on the grid)
    where the gain has dropped 1 dB below the small-signal value;
    ``p1db_out = p1db_in + G0 - 1``.  Both are ``None`` if the grid never
    reaches compression.
    """
    pump.validate(table, line.i_star)
    p_in = np.asarray(p_in_grid, dtype=float)
    if p_in.size == 0 or np.any(np.diff(p_in) <= 0):
        raise DomainError("input power grid must be non-empty and ascending")
    g0, _ = signal_gain(line, table, pump, f_signal, mode, probe_dbm, coupling)
    gains = np.array([signal_gain(line, table, pump, f_signal, mode, p, coupling)[0] for p in p_in])
    drop = g0 - gains
    p1_in = None
    for n in range(p_in.size):
        if drop[n] >= 1.0:
            if n == 0:
                p1_in = float(p_in[0]) if drop[0] == 1.0 else None
            else:
                t = (1.0 - drop[n - 1]) / (drop[n] - drop[n - 1])
                p1_in = float(p_in[n - 1] + t * (p_in[n] - p_in[n - 1]))
            break
    p1_out = None if p1_in is None else p1_in + g0 - 1.0
    return CompressionResult(p1_in, p1_out, g0, p_in, gains)


def pump_for_gain(line: FilmLine, table: DispersionTable, f_pump: float, f_signal: float, target_db: float,
                  mode: str = "three_tone", coupling: str = "effective", i_max_ratio: float = 0.5) -> PumpConfig:
    """Pump current giving ``target_db`` of small-signal gain at ``f_signal``."""

    def excess(i):
        return signal_gain(line, table, PumpConfig(f_pump, i), f_signal, mode, coupling=coupling)[0] - target_db

    # Gain is not monotone in pump current past the optimum; take the first crossing.
    grid = np.linspace(1e-3, i_max_ratio, 50) * line.i_star
    vals = [excess(i) for i in grid]
    for a, b, va, vb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if va < 0 <= vb:
            i_p = brentq(excess, a, b, xtol=1e-12)
            return PumpConfig(f_pump, i_p)
    raise DomainError(f"no pump current below {grid[-1]:.4g} A reaches {target_db} dB")


@dataclass(frozen=True)
class RippleModel:
    """Gain medium of length ``length`` between two partial reflectors.

    ``v_ph`` sets ``k = 2 pi f / v_ph``.
    """

    r: float
    t: float
    g: float
    length: float
    v_ph: float

    def __post_init__(self):
        if not 0 <= self.r < 1:
            raise DomainError("reflection amplitude must satisfy 0 <= r < 1")
        if self.t < 0 or self.r**2 + self.t**2 > 1 + 1e-12:
            raise DomainError("need t >= 0 and r^2 + t^2 <= 1")
        if not self.g > 0 or not self.length > 0 or not self.v_ph > 0:
            raise DomainError("g, length and v_ph must be positive")

    def k(self, f):
        return 2 * np.pi * np.asarray(f, dtype=float) / self.v_ph


RIPPLE_CONVENTIONS = {"as_printed": "as_printed", "printed": "as_printed", "round_trip": "round_trip", "roundtrip": "round_trip"}


def ripple_s21(model: RippleModel, freq_grid, convention: str = "as_printed"):
    """|S21| in dB of the reflector-bounded gain medium.

    ``as_printed`` uses ``r^2 g exp(-ikL)`` in the denominator; ``round_trip``
    uses ``r^2 g^2 exp(-2ikL)``.  Raises :class:`OscillationError` once the
    loop gain reaches one.
    """
    from .noisecal import Trace

    try:
        conv = RIPPLE_CONVENTIONS[convention]
    except KeyError:
        raise DomainError(f"unknown ripple convention {convention!r}") from None
    f = np.asarray(freq_grid, dtype=float)
    kl = model.k(f) * model.length
    r2, g = model.r**2, model.g
    if conv == "as_printed":
        loop = r2 * g
        if loop >= 1:
            raise OscillationError(f"r^2 g = {loop:.6g} >= 1: transmission diverges at g = r^-2")
        s21 = model.t**2 * g * np.exp(-1j * kl) / (1 - loop * np.exp(-1j * kl))
    else:
        loop = r2 * g**2
        if loop >= 1:
            raise OscillationError(f"r^2 g^2 = {loop:.6g} >= 1: round-trip gain reaches the oscillation threshold")
        s21 = model.t**2 * g * np.exp(-1j * kl) / (1 - loop * np.exp(-2j * kl))
    return Trace(f, 20 * np.log10(np.abs(s21)), "dB", "pump_on")


def ripple_period(model: RippleModel, convention: str = "as_printed") -> float:
    """Spacing of adjacent ripple maxima in Hz."""
    conv = RIPPLE_CONVENTIONS.get(convention, convention)
    return model.v_ph / (model.length if conv == "as_printed" else 2 * model.length)


def measured_ripple_period(trace) -> float:
    """Mean spacing of local maxima in a ripple trace (Hz)."""
    v = np.asarray(trace.values)
    peaks = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1
    if peaks.size < 2:
        raise DomainError("fewer than two ripple maxima on the grid")
    # Parabolic refinement of each maximum.
    f = np.asarray(trace.freq_grid)
    df = f[1] - f[0]
    a, b, c = v[peaks - 1], v[peaks], v[peaks + 1]
    denom = a - 2 * b + c
    shift = np.where(denom != 0, 0.5 * (a - c) / np.where(denom != 0, denom, 1), 0.0)
    pos = f[peaks] + shift * df
    return float(np.mean(np.diff(pos)))
