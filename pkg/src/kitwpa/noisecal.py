"""Y-factor and cascaded-noise calibration of a parametric amplifier chain.

Noise is expressed in quanta (units of ``h f`` per unit bandwidth) referred to
the input of whichever stage is being discussed.  The measurement cascade is

    termination -> loss L1 -> amplifier (G_PA, N_A) -> loss L2
                -> HEMT (G_HEMT, N_HEMT) -> warm stage (G_w, N_w) -> analyzer

Loss factors are power transmissions in (0, 1].  Chain fields may be scalars
or arrays over a frequency grid; everything broadcasts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import constants
from scipy.ndimage import uniform_filter1d

from .errors import (AlignmentError, BelowVacuumWarning, CalibrationAnomalyWarning, DomainError,
                     InvalidYFactorError)

N_QM = 0.5
H_OVER_K = constants.h / constants.k

UNITS = ("dB", "quanta", "kelvin", "linear")
STATES = ("hot", "cold", "hot_off", "cold_off", "pump_on", "pump_off", "bypass", "gain", "derived")


@dataclass(frozen=True)
class Trace:
    """Frequency-indexed real curve."""

    freq_grid: np.ndarray
    values: np.ndarray
    unit: str
    state: str = "derived"

    def __post_init__(self):
        f = np.asarray(self.freq_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "freq_grid", f)
        object.__setattr__(self, "values", v)
        if f.ndim != 1 or v.shape != f.shape:
            raise DomainError("trace needs 1-D frequency and value arrays of equal length")
        if f.size and np.any(np.diff(f) <= 0):
            raise DomainError("trace frequency grid must be strictly ascending")
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(v)):
            raise DomainError("trace contains non-finite entries")
        if self.unit not in UNITS:
            raise DomainError(f"unknown unit {self.unit!r}; expected one of {UNITS}")
        if self.state not in STATES:
            raise DomainError(f"unknown state {self.state!r}; expected one of {STATES}")

    def __len__(self):
        return self.freq_grid.size

    def linear(self) -> np.ndarray:
        """Values as linear power ratios (dB traces are converted)."""
        if self.unit == "dB":
            return 10 ** (self.values / 10)
        if self.unit == "linear":
            return self.values
        raise DomainError(f"cannot read a {self.unit} trace as linear power")

    def same_grid(self, other: Trace) -> bool:
        return self.freq_grid.shape == other.freq_grid.shape and np.array_equal(self.freq_grid, other.freq_grid)


def _align(*traces: Trace) -> np.ndarray:
    ref = traces[0]
    for t in traces[1:]:
        if not ref.same_grid(t):
            raise AlignmentError(f"{t.state} trace is sampled on a different grid than the {ref.state} trace")
    return ref.freq_grid


@dataclass(frozen=True)
class NoiseChain:
    """Gains (linear), added noises (quanta), losses and load temperatures (K)."""

    l1: float | np.ndarray
    l2: float | np.ndarray
    g_pa: float | np.ndarray
    n_a: float | np.ndarray
    g_hemt: float | np.ndarray
    n_hemt: float | np.ndarray
    g_w: float | np.ndarray = 1.0
    n_w: float | np.ndarray = 0.0
    t_hot: float = 3.18
    t_cold: float = 0.02

    def __post_init__(self):
        problems = []
        for name in ("l1", "l2"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all((v > 0) & (v <= 1)):
                problems.append(f"{name} must lie in (0, 1]")
        for name in ("g_pa", "g_hemt", "g_w"):
            if not np.all(np.asarray(getattr(self, name), dtype=float) > 0):
                problems.append(f"{name} must be positive")
        for name in ("n_hemt", "n_w"):
            if not np.all(np.asarray(getattr(self, name), dtype=float) >= 0):
                problems.append(f"{name} must be non-negative")
        if not self.t_hot > self.t_cold > 0:
            problems.append("need t_hot > t_cold > 0")
        if problems:
            raise DomainError("; ".join(problems))

    def with_(self, **changes) -> NoiseChain:
        return replace(self, **changes)


def occupation(t, f):
    """Thermal occupation ``0.5 coth(h f / 2 k T)`` including the vacuum half quantum."""
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any(t <= 0):
        raise DomainError("temperature must be positive")
    if np.any(f <= 0):
        raise DomainError("frequency must be positive")
    x = H_OVER_K * f / (2 * t)
    # coth(x) = 1 + 2 / expm1(2x) stays accurate for large x.
    with np.errstate(over="ignore"):
        out = 0.5 * (1 + 2 / np.expm1(2 * x))
    return out if out.ndim else float(out)


def kelvin_to_quanta(t_noise, f):
    """Amplifier noise temperature to quanta by ``T / (h f / k_B)``."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise DomainError("frequency must be positive")
    out = np.asarray(t_noise, dtype=float) / (H_OVER_K * f)
    return out if out.ndim else float(out)


def quanta_to_kelvin(n, f):
    out = np.asarray(n, dtype=float) * H_OVER_K * np.asarray(f, dtype=float)
    return out if out.ndim else float(out)


def y_factor_nsys(n_hot, n_cold, y, strict: bool = True):
    """System noise ``(N_H - Y N_C) / (Y - 1)`` from a hot/cold power ratio.

    With ``strict`` any ``Y <= 1`` raises :class:`InvalidYFactorError`;
    otherwise those points come back as NaN.  Negative results trigger a
    :class:`CalibrationAnomalyWarning`.
    """
    y = np.asarray(y, dtype=float)
    bad = ~(y > 1)
    if np.any(bad) and strict:
        raise InvalidYFactorError(f"Y-factor must exceed 1 (got {np.min(y):.6g}); hot and cold are indistinguishable or swapped")
    y_safe = np.where(bad, 2.0, y)
    out = (np.asarray(n_hot, dtype=float) - y_safe * np.asarray(n_cold, dtype=float)) / (y_safe - 1)
    out = np.where(bad, np.nan, out)
    if np.any(out[~np.isnan(out)] < 0):
        warnings.warn("negative system noise: hot/cold data look inverted or corrupted", CalibrationAnomalyWarning, stacklevel=2)
    return out if out.ndim else float(out)


def _stage_noise(chain: NoiseChain, n_in, pump: str):
    if pump == "bypass":
        n4 = chain.g_hemt * (n_in + chain.n_hemt)
        return chain.g_w * (n4 + chain.n_w)
    if pump == "on":
        g_pa, n_a = chain.g_pa, chain.n_a
    elif pump == "off":
        g_pa, n_a = 1.0, 0.0
    else:
        raise DomainError(f"pump state must be 'on', 'off' or 'bypass', got {pump!r}")
    n1 = chain.l1 * n_in + N_QM * (1 - chain.l1)
    n2 = g_pa * (n1 + n_a)
    n3 = chain.l2 * n2 + N_QM * (1 - chain.l2)
    n4 = chain.g_hemt * (n3 + chain.n_hemt)
    return chain.g_w * (n4 + chain.n_w)


def cascade_forward(chain: NoiseChain, t_source, f, pump: str = "on"):
    """Noise at the analyzer, evaluated stage by stage.

    ``pump="off"`` treats the unpumped amplifier as a lossless line;
    ``pump="bypass"`` routes the termination straight to the HEMT.
    """
    return _stage_noise(chain, occupation(t_source, f), pump)


def effective_gain(chain: NoiseChain):
    return chain.g_w * chain.g_hemt * chain.l2 * chain.g_pa * chain.l1


def effective_amp_noise(chain: NoiseChain):
    return N_QM * (1 - chain.l1) / chain.l1 + chain.n_a / chain.l1


def effective_hemt_noise(chain: NoiseChain):
    """Later-stage noise referred to the chain input, warm stage included."""
    ref = chain.l2 * chain.g_pa * chain.l1
    return N_QM * (1 - chain.l2) / ref + chain.n_hemt / ref + chain.n_w / (chain.g_hemt * ref)


def cascade_effective(chain: NoiseChain, t_source, f):
    """Pumped analyzer noise from the factorised form ``G_eff (N_in + N_PA + N_HEMT)``."""
    n_in = occupation(t_source, f)
    return effective_gain(chain) * (n_in + effective_amp_noise(chain) + effective_hemt_noise(chain))


def system_noise(chain: NoiseChain):
    """Input-referred system noise with the pump on."""
    return effective_amp_noise(chain) + effective_hemt_noise(chain)


def system_noise_off(chain: NoiseChain):
    """Input-referred system noise with the pump off."""
    ll = chain.l1 * chain.l2
    return (N_QM * (1 - ll) + chain.n_hemt + chain.n_w / chain.g_hemt) / ll


def added_noise(n_sys, chain: NoiseChain, warn: bool = True):
    """Amplifier added noise from the system noise, losses, gain and HEMT noise.

    Negative results are returned unchanged and flagged with a
    :class:`BelowVacuumWarning`.
    """
    l1, l2, g = chain.l1, chain.l2, chain.g_pa
    n_a = l1 * np.asarray(n_sys, dtype=float) - N_QM * (l2 * g * (1 - l1) + (1 - l2)) / (l2 * g) - chain.n_hemt / (l2 * g)
    if warn and np.any(n_a < 0):
        warnings.warn("added noise below zero: inconsistent losses, gain or system noise", BelowVacuumWarning, stacklevel=2)
    return n_a if np.ndim(n_a) else float(n_a)


class LossEstimate(NamedTuple):
    loss_db: Trace
    factor: np.ndarray


def deembed_loss(bypass: Trace, pump_off: Trace) -> LossEstimate:
    """Per-side loss from bypass and unpumped transmissions (identical fixtures on both sides)."""
    f = _align(bypass, pump_off)
    for t in (bypass, pump_off):
        if t.unit != "dB":
            raise DomainError(f"{t.state} transmission must be in dB")
    loss = (bypass.values - pump_off.values) / 2
    return LossEstimate(Trace(f, loss, "dB", "derived"), 10 ** (-loss / 10))


class HemtNoise(NamedTuple):
    n_hemt: np.ndarray
    invalid: np.ndarray
    n_sys_off: np.ndarray
    y: np.ndarray


def hemt_noise_from_yfactor(hot: Trace, cold: Trace, chain: NoiseChain) -> HemtNoise:
    """HEMT added noise from a pump-off Y-factor measurement.

    Points with ``Y <= 1`` come back as NaN with ``invalid`` set.
    """
    f = _align(hot, cold)
    y = hot.linear() / cold.linear()
    n_h, n_c = occupation(chain.t_hot, f), occupation(chain.t_cold, f)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalibrationAnomalyWarning)
        n_off = np.asarray(y_factor_nsys(n_h, n_c, y, strict=False))
    ll = chain.l1 * chain.l2
    n_hemt = ll * n_off - N_QM * (1 - ll) - chain.n_w / chain.g_hemt
    return HemtNoise(np.asarray(n_hemt, dtype=float), ~(y > 1), n_off, y)


def _bypass_baseline(f):
    ghz = f / 1e9
    return -2.0 - 0.15 * ghz - 0.05 * np.sin(ghz)


def synth_measurement(chain: NoiseChain, freq_grid, seed=None, noise: float = 0.0, bypass_db=None) -> dict[str, Trace]:
    """Analyzer and VNA traces generated from the forward model.

    Returns ``hot``, ``cold`` (pump on), ``hot_off``, ``cold_off`` (pump off)
    as linear powers referred to unit analyzer gain, plus ``pump_off``,
    ``bypass`` and ``gain`` in dB.  ``noise`` is the relative standard
    deviation of independent multiplicative noise on every trace.  The
    unpumped transmission assumes ``l1 == l2``.
    """
    f = np.asarray(freq_grid, dtype=float)
    rng = np.random.default_rng(seed)

    def jitter(x):
        if noise == 0:
            return x
        return x * (1 + noise * rng.standard_normal(f.shape))

    def full(x):
        return np.broadcast_to(np.asarray(x, dtype=float), f.shape).copy()

    out = {}
    for name, t, pump in (("hot", chain.t_hot, "on"), ("cold", chain.t_cold, "on"),
                          ("hot_off", chain.t_hot, "off"), ("cold_off", chain.t_cold, "off")):
        out[name] = Trace(f, jitter(full(cascade_forward(chain, t, f, pump))), "linear", name)
    bp = _bypass_baseline(f) if bypass_db is None else full(bypass_db)
    off = bp + 10 * np.log10(full(chain.l1) * full(chain.l2))
    out["bypass"] = Trace(f, 10 * np.log10(jitter(10 ** (bp / 10))), "dB", "bypass")
    out["pump_off"] = Trace(f, 10 * np.log10(jitter(10 ** (off / 10))), "dB", "pump_off")
    out["gain"] = Trace(f, 10 * np.log10(jitter(full(chain.g_pa))), "dB", "gain")
    return out


@dataclass
class Extraction:
    freq_grid: np.ndarray
    loss_db: np.ndarray
    loss_factor: np.ndarray
    y: np.ndarray
    n_sys: np.ndarray
    n_hemt: np.ndarray
    n_a: np.ndarray
    invalid: np.ndarray
    below_vacuum: np.ndarray
    notes: list[str] = field(default_factory=list)

    def columns(self) -> dict[str, np.ndarray]:
        return {"loss_dB": self.loss_db, "loss_factor": self.loss_factor, "y": self.y, "n_sys": self.n_sys,
                "n_hemt": self.n_hemt, "n_a": self.n_a}


def _smooth(x, width):
    if not width or width <= 1:
        return x
    return uniform_filter1d(x, int(width), mode="nearest")


def extract(hot: Trace, cold: Trace, pump_off: Trace, bypass: Trace, gain: Trace, t_hot: float, t_cold: float,
            n_hemt=None, hot_off: Trace | None = None, cold_off: Trace | None = None, g_hemt: float = 1.0,
            smooth: int | None = None) -> Extraction:
    """De-embed losses, apply the Y-factor, and solve for the added noise per bin.

    HEMT noise comes from the pump-off hot/cold traces when given, otherwise
    from ``n_hemt`` (quanta, scalar or per bin).  ``smooth`` applies a moving
    average of that many bins to the analyzer traces before forming ratios.
    """
    traces = [hot, cold, pump_off, bypass, gain] + [t for t in (hot_off, cold_off) if t is not None]
    f = _align(*traces)
    if gain.unit != "dB":
        raise DomainError("gain trace must be in dB")
    loss = deembed_loss(bypass, pump_off)
    lf = loss.factor
    g_pa = 10 ** (gain.values / 10)
    notes = []

    if hot_off is not None and cold_off is not None:
        probe = NoiseChain(lf, lf, 1.0, 0.0, g_hemt, 0.0, t_hot=t_hot, t_cold=t_cold)
        h_off = Trace(f, _smooth(hot_off.linear(), smooth), "linear", "hot_off")
        c_off = Trace(f, _smooth(cold_off.linear(), smooth), "linear", "cold_off")
        hemt = hemt_noise_from_yfactor(h_off, c_off, probe)
        n_h = hemt.n_hemt
        invalid = hemt.invalid.copy()
        notes.append("HEMT noise from pump-off Y-factor")
    elif n_hemt is not None:
        n_h = np.broadcast_to(np.asarray(n_hemt, dtype=float), f.shape).copy()
        invalid = np.zeros(f.shape, dtype=bool)
        notes.append("HEMT noise supplied")
    else:
        raise DomainError("need either n_hemt or pump-off hot/cold traces")

    y = _smooth(hot.linear(), smooth) / _smooth(cold.linear(), smooth)
    invalid |= ~(y > 1)
    n_sys = np.asarray(y_factor_nsys(occupation(t_hot, f), occupation(t_cold, f), y, strict=False))
    chain = NoiseChain(lf, lf, g_pa, 0.0, g_hemt, np.nan_to_num(n_h), t_hot=t_hot, t_cold=t_cold)
    n_a = np.asarray(added_noise(n_sys, chain, warn=False))
    n_a = np.where(invalid, np.nan, n_a)
    below = np.nan_to_num(n_a, nan=0.0) < 0
    if np.any(below):
        warnings.warn(f"added noise below zero at {int(below.sum())} bins", BelowVacuumWarning, stacklevel=2)
    if np.any(invalid):
        notes.append(f"{int(invalid.sum())} bins with Y <= 1 flagged invalid")
    return Extraction(f, loss.loss_db.values, lf, y, n_sys, n_h, n_a, invalid, below, notes)


def extract_from_synth(traces: dict[str, Trace], chain: NoiseChain, use_hemt_traces: bool = True, smooth=None) -> Extraction:
    """Run :func:`extract` on the output of :func:`synth_measurement`."""
    kw = {"hot_off": traces["hot_off"], "cold_off": traces["cold_off"]} if use_hemt_traces else {"n_hemt": chain.n_hemt}
    return extract(traces["hot"], traces["cold"], traces["pump_off"], traces["bypass"], traces["gain"],
                   chain.t_hot, chain.t_cold, g_hemt=float(np.mean(chain.g_hemt)), smooth=smooth, **kw)
