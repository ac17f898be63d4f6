"""Stub-loaded nonlinear transmission line: network model and Bloch dispersion.

The line is a cascade of identical-pitch cells.  Each cell is half a pitch of
bare line, a shunt open-circuited stub, and another half pitch.  Stub lengths
follow a cosine profile over one modulation period (the supercell), which opens
a Bragg stopband at ``v / (2 * period)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import constants
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, least_squares

from .errors import CalibrationError, DomainError, EvanescentToneError, FitError, SingularFrequencyError

C0 = constants.c


@dataclass(frozen=True)
class FilmLine:
    """Electrical description of the nonlinear line.

    ``l_per_m`` and ``c_per_m`` are the loaded (effective-medium) values.
    ``bare_l_per_m`` / ``bare_c_per_m`` describe the line between stubs and are
    filled in by :func:`calibrate_loaded_line`; when unset, the loaded values
    are used for the bare line too.  ``v_target`` is a fraction of c.
    """

    l_per_m: float
    c_per_m: float
    i_star: float
    total_length: float
    z_target: float | None = None
    v_target: float | None = None
    bare_l_per_m: float | None = None
    bare_c_per_m: float | None = None

    def __post_init__(self):
        for name in ("l_per_m", "c_per_m", "i_star", "total_length"):
            value = getattr(self, name)
            if not value > 0:
                raise DomainError(f"{name} must be positive, got {value!r}")
        for name in ("z_target", "v_target", "bare_l_per_m", "bare_c_per_m"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise DomainError(f"{name} must be positive, got {value!r}")

    @property
    def bare(self) -> tuple[float, float]:
        """(L, C) per metre of the bare line between stubs."""
        if self.bare_l_per_m is None or self.bare_c_per_m is None:
            return self.l_per_m, self.c_per_m
        return self.bare_l_per_m, self.bare_c_per_m

    @property
    def target_z0(self) -> float:
        if self.z_target is not None:
            return self.z_target
        return math.sqrt(self.l_per_m / self.c_per_m)

    @property
    def target_vph(self) -> float:
        """Target loaded phase velocity in m/s."""
        if self.v_target is not None:
            return self.v_target * C0
        return 1.0 / math.sqrt(self.l_per_m * self.c_per_m)


@dataclass(frozen=True)
class StubPattern:
    """Stub geometry along the line.

    ``stub_len_mod`` is the peak-to-peak swing of the stub length; cell ``n``
    of a period carries ``stub_len_avg + stub_len_mod / 2 * cos(2 pi n / N)``
    with ``N = round(mod_period / cell_pitch)``.  The supercell spans exactly
    one modulation period, so the realised pitch is ``mod_period / N``.
    ``stub_z0`` / ``stub_vph`` default to the bare-line values.
    """

    cell_pitch: float
    stub_len_avg: float
    stub_len_mod: float = 0.0
    mod_period: float | None = None
    stub_z0: float | None = None
    stub_vph: float | None = None

    def __post_init__(self):
        if not self.cell_pitch > 0:
            raise DomainError(f"cell_pitch must be positive, got {self.cell_pitch!r}")
        if self.stub_len_avg < 0 or self.stub_len_mod < 0:
            raise DomainError("stub lengths must be non-negative")
        if self.stub_len_avg - self.stub_len_mod / 2 < 0:
            raise DomainError("stub_len_mod swing exceeds the mean stub length")
        if self.mod_period is not None:
            if self.mod_period < self.cell_pitch:
                raise DomainError("mod_period must be at least cell_pitch")
            if self.cells_per_period < 2:
                raise DomainError("need at least two cells per modulation period")
        for name in ("stub_z0", "stub_vph"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise DomainError(f"{name} must be positive, got {value!r}")

    @property
    def cells_per_period(self) -> int:
        if self.mod_period is None:
            return 1
        return int(round(self.mod_period / self.cell_pitch))

    @property
    def period(self) -> float:
        """Supercell length in metres."""
        if self.mod_period is None:
            return self.cell_pitch
        return self.mod_period

    @property
    def pitch(self) -> float:
        """Realised cell pitch (the supercell divided evenly)."""
        return self.period / self.cells_per_period

    def stub_lengths(self) -> np.ndarray:
        n = np.arange(self.cells_per_period)
        if self.mod_period is None:
            return np.full(1, self.stub_len_avg)
        return self.stub_len_avg + 0.5 * self.stub_len_mod * np.cos(2 * np.pi * n / self.cells_per_period)


@dataclass(frozen=True)
class TwoPortMatrix:
    """Chain (ABCD) matrix.  Entries may be arrays broadcast over frequency."""

    a: complex | np.ndarray
    b: complex | np.ndarray
    c: complex | np.ndarray
    d: complex | np.ndarray

    def __matmul__(self, other: TwoPortMatrix) -> TwoPortMatrix:
        return TwoPortMatrix(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    @property
    def det(self):
        return self.a * self.d - self.b * self.c

    @property
    def half_trace(self):
        return (self.a + self.d) / 2

    def to_array(self) -> np.ndarray:
        """Stack into ``(..., 2, 2)``."""
        a, b, c, d = np.broadcast_arrays(self.a, self.b, self.c, self.d)
        return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)

    @classmethod
    def from_array(cls, m) -> TwoPortMatrix:
        m = np.asarray(m)
        return cls(m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1])

    @classmethod
    def identity(cls, shape=()) -> TwoPortMatrix:
        one = np.ones(shape, dtype=complex)
        zero = np.zeros(shape, dtype=complex)
        return cls(one, zero, zero.copy(), one.copy())

    @classmethod
    def line(cls, z0: float, electrical_length) -> TwoPortMatrix:
        """Lossless line section of characteristic impedance ``z0``."""
        cos = np.cos(electrical_length)
        sin = np.sin(electrical_length)
        return cls(cos + 0j, 1j * z0 * sin, 1j * sin / z0, cos + 0j)

    @classmethod
    def shunt(cls, admittance) -> TwoPortMatrix:
        y = np.asarray(admittance, dtype=complex)
        return cls(np.ones_like(y), np.zeros_like(y), y, np.ones_like(y))


def telegrapher_params(line: FilmLine) -> tuple[float, float]:
    """Return ``(z0, v_ph)`` of the loaded line from its per-length L and C."""
    L, C = line.l_per_m, line.c_per_m
    if not (L > 0 and C > 0):
        raise DomainError("per-length inductance and capacitance must be positive")
    return math.sqrt(L / C), 1.0 / math.sqrt(L * C)


def _bare_electricals(line: FilmLine, pattern: StubPattern):
    L, C = line.bare
    zb, vb = math.sqrt(L / C), 1.0 / math.sqrt(L * C)
    zs = pattern.stub_z0 if pattern.stub_z0 is not None else zb
    vs = pattern.stub_vph if pattern.stub_vph is not None else vb
    return zb, vb, zs, vs


def unit_cell_matrix(line: FilmLine, stub_len: float, pattern: StubPattern, f, pitch: float | None = None) -> TwoPortMatrix:
    """Chain matrix of one cell: half pitch, shunt open stub, half pitch.

    ``f`` may be a scalar or an array.  ``pitch`` defaults to
    ``pattern.cell_pitch``.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise DomainError("frequency must be positive")
    if pitch is None:
        pitch = pattern.cell_pitch
    zb, vb, zs, vs = _bare_electricals(line, pattern)
    omega = 2 * np.pi * f
    half = TwoPortMatrix.line(zb, omega / vb * pitch / 2)
    if stub_len == 0:
        return half @ half
    theta = omega / vs * stub_len
    cos = np.cos(theta)
    if np.any(np.abs(cos) < 1e-12):
        bad = np.atleast_1d(f)[np.abs(np.atleast_1d(cos)) < 1e-12][0]
        raise SingularFrequencyError(f"stub of length {stub_len:.4g} m resonates at {bad:.9g} Hz")
    y = 1j * np.sin(theta) / (zs * cos)
    return half @ TwoPortMatrix.shunt(y) @ half


def supercell_matrix(line: FilmLine, pattern: StubPattern, f) -> TwoPortMatrix:
    """Product of the cell matrices over one modulation period."""
    f = np.asarray(f, dtype=float)
    total = TwoPortMatrix.identity(f.shape)
    for stub in pattern.stub_lengths():
        total = total @ unit_cell_matrix(line, stub, pattern, f, pitch=pattern.pitch)
    return total


def image_impedance(m: TwoPortMatrix):
    """Input image impedance sqrt(AB / CD)."""
    return np.sqrt(m.a * m.b / (m.c * m.d))


class DispersionTable:
    """Bloch propagation constant tabulated on a frequency grid.

    Attributes
    ----------
    freq_grid : ndarray
        Ascending frequencies in Hz.
    k_complex : ndarray
        Bloch propagation constant in rad/m; ``Im(k) >= 0`` and nonzero only
        inside stopbands.
    stopbands : list of (float, float)
        Stopband intervals in Hz with edges refined between grid points.
    period : float
        Supercell length used for ``cos(kD) = (A + D) / 2``.
    v_eff : float
        Low-frequency (effective-medium) phase velocity in m/s.
    """

    def __init__(self, freq_grid, k_complex, stopbands, period, v_eff):
        self.freq_grid = np.asarray(freq_grid, dtype=float)
        self.k_complex = np.asarray(k_complex, dtype=complex)
        self.stopbands = [(float(lo), float(hi)) for lo, hi in stopbands]
        self.period = float(period)
        self.v_eff = float(v_eff)
        self._splines = self._build_splines()

    def _build_splines(self):
        mask = self.stopband_mask
        splines = []
        start = None
        for i, gap in enumerate(np.append(mask, True)):
            if not gap and start is None:
                start = i
            elif gap and start is not None:
                f = self.freq_grid[start:i]
                k = self.k_complex.real[start:i]
                if f.size >= 2:
                    splines.append((f[0], f[-1], CubicSpline(f, k)))
                else:
                    splines.append((f[0], f[-1], lambda x, k0=k[0]: np.full_like(np.asarray(x, float), k0)))
                start = None
        return splines

    @property
    def stopband_mask(self) -> np.ndarray:
        return self.k_complex.imag > 0

    def in_stopband(self, f):
        f = np.asarray(f, dtype=float)
        out = np.zeros(f.shape, dtype=bool)
        for lo, hi in self.stopbands:
            out |= (f >= lo) & (f <= hi)
        return out

    def covers(self, f) -> bool:
        f = np.asarray(f, dtype=float)
        return bool(np.all((f >= self.freq_grid[0]) & (f <= self.freq_grid[-1])))

    def k_real(self, f, label: str | None = None):
        """Cubic interpolation of Re(k) within the passband containing ``f``."""
        f_arr = np.atleast_1d(np.asarray(f, dtype=float))
        out = np.empty(f_arr.shape)
        what = f"tone {label!r}" if label else "tone"
        for idx, x in np.ndenumerate(f_arr):
            if not self.freq_grid[0] <= x <= self.freq_grid[-1]:
                raise EvanescentToneError(f"{what} at {x:.9g} Hz is outside the dispersion table", tone=label, freq=x)
            if self.in_stopband(x):
                raise EvanescentToneError(f"{what} at {x:.9g} Hz lies in a stopband", tone=label, freq=x)
            out[idx] = self._spline_for(x)(x)
        return out if np.ndim(f) else float(out[0])

    def _spline_for(self, x):
        best = None
        for lo, hi, spline in self._splines:
            if lo <= x <= hi:
                return spline
            gap = lo - x if x < lo else x - hi
            if best is None or gap < best[0]:
                best = (gap, spline)
        return best[1]

    def stopband_above(self, f) -> tuple[float, float] | None:
        """First stopband whose lower edge lies above ``f``."""
        for lo, hi in self.stopbands:
            if lo > f:
                return lo, hi
        return None

    def linear_part_subtracted(self) -> np.ndarray:
        return self.k_complex.real - 2 * np.pi * self.freq_grid / self.v_eff

    def to_csv(self, path) -> None:
        """Write columns ``f_Hz, re_k, im_k, in_stopband, k_minus_linear``."""
        mask = self.stopband_mask
        lin = self.linear_part_subtracted()
        with open(path, "w", newline="\n") as fh:
            fh.write("f_Hz,re_k,im_k,in_stopband,k_minus_linear\n")
            for f, k, gap, dk in zip(self.freq_grid, self.k_complex, mask, lin):
                fh.write(f"{int(round(f))},{k.real:.9g},{k.imag:.9g},{int(gap)},{dk:.9g}\n")


def _unwrap_bloch(x: np.ndarray) -> np.ndarray:
    """Continuous nondecreasing kD from cos(kD) = x, starting at the DC branch."""
    theta = np.arccos(np.clip(x, -1.0, 1.0))
    gap = np.abs(x) > 1
    decay = np.where(gap, np.arccosh(np.maximum(np.abs(x), 1.0)), 0.0)
    re = np.empty_like(theta)
    prev = 0.0
    tol = 1e-12
    for i in range(theta.size):
        if gap[i]:
            m = math.ceil(prev / math.pi - tol)
            if (x[i] < 0) != (m % 2 == 1):
                m += 1
            value = m * math.pi
        else:
            t = theta[i]
            base = 2 * math.pi * math.floor(prev / (2 * math.pi) + tol)
            value = min(
                c for c in (base - t, base + t, base + 2 * math.pi - t, base + 2 * math.pi + t)
                if c >= prev - tol * max(1.0, prev)
            )
        re[i] = value
        prev = value
    return re + 1j * decay


def supercell_bloch(line: FilmLine, pattern: StubPattern | None, freq_grid) -> DispersionTable:
    """Bloch dispersion of the periodically loaded line over ``freq_grid``.

    With ``pattern=None`` the bare line is treated as a uniform medium.
    """
    f = np.asarray(freq_grid, dtype=float)
    if f.size == 0:
        raise DomainError("empty frequency grid")
    if np.any(np.diff(f) <= 0):
        raise DomainError("frequency grid must be strictly ascending")
    if pattern is None:
        L, C = line.bare
        v = 1.0 / math.sqrt(L * C)
        return DispersionTable(f, 2 * np.pi * f / v + 0j, [], period=1.0, v_eff=v)

    D = pattern.period

    def half_trace(freq):
        return supercell_matrix(line, pattern, freq).half_trace.real

    x = half_trace(f)
    k = _unwrap_bloch(x) / D
    stopbands = _refine_stopbands(f, x, half_trace)
    v_eff = _low_frequency_velocity(line, pattern)
    return DispersionTable(f, k, stopbands, period=D, v_eff=v_eff)


def _refine_stopbands(f, x, half_trace):
    gap = np.abs(x) > 1
    bands = []
    i = 0
    n = f.size
    while i < n:
        if not gap[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and gap[j + 1]:
            j += 1
        sign = 1.0 if x[i] > 0 else -1.0
        g = lambda freq: sign * half_trace(freq) - 1.0
        lo = f[i] if i == 0 else brentq(g, f[i - 1], f[i], xtol=1e-3, rtol=1e-15)
        hi = f[j] if j == n - 1 else brentq(g, f[j], f[j + 1], xtol=1e-3, rtol=1e-15)
        bands.append((lo, hi))
        i = j + 1
    return bands


def _low_frequency_velocity(line, pattern, f_low=10e6):
    m = supercell_matrix(line, pattern, np.array([f_low]))
    x = m.half_trace.real[0]
    kD = 2 * math.asin(math.sqrt(max(0.0, (1 - x) / 2)))
    return 2 * math.pi * f_low * pattern.period / kD


def loaded_line_params(line: FilmLine, pattern: StubPattern, f_low: float = 10e6) -> tuple[float, float]:
    """Low-frequency (image impedance, Bloch phase velocity) of the loaded line."""
    m = supercell_matrix(line, pattern, np.array([f_low]))
    z = float(np.real(image_impedance(m))[0])
    return z, _low_frequency_velocity(line, pattern, f_low)


def calibrate_loaded_line(line: FilmLine, pattern: StubPattern, tol: float = 1e-9, max_iter: int = 20) -> FilmLine:
    """Choose bare-line and stub per-length parameters that hit the loaded targets.

    Stubs share the bare line's per-length values unless the pattern overrides
    them.  The low-frequency image impedance and Bloch phase velocity of the
    network must match ``line.target_z0`` and ``line.target_vph``; the returned
    line carries the loaded values in ``l_per_m``/``c_per_m`` and the network
    values in ``bare_l_per_m``/``bare_c_per_m``.
    """
    z_t, v_t = line.target_z0, line.target_vph
    D = pattern.period
    stubs = pattern.stub_lengths()
    # DC: series L from the line only; shunt C from line plus stubs.
    L_b = z_t / v_t
    c_needed = D / (z_t * v_t)
    if pattern.stub_z0 is None and pattern.stub_vph is None:
        C_b = c_needed / (D + stubs.sum())
    else:
        zs = pattern.stub_z0 if pattern.stub_z0 is not None else z_t
        vs = pattern.stub_vph if pattern.stub_vph is not None else v_t
        C_b = (c_needed - stubs.sum() / (zs * vs)) / D
        if C_b <= 0:
            raise CalibrationError("stub capacitance alone exceeds the loaded target", residual=float("inf"))

    loaded = dict(l_per_m=z_t / v_t, c_per_m=1.0 / (z_t * v_t))
    candidate = replace(line, bare_l_per_m=float(L_b), bare_c_per_m=float(C_b), **loaded)
    residual = float("inf")
    for _ in range(max_iter):
        z_m, v_m = loaded_line_params(candidate, pattern)
        residual = max(abs(z_m / z_t - 1), abs(v_m / v_t - 1))
        if residual < tol:
            break
        L_b *= (z_t / z_m) * (v_m / v_t)
        C_b *= (z_m / z_t) * (v_m / v_t)
        candidate = replace(candidate, bare_l_per_m=float(L_b), bare_c_per_m=float(C_b))
    if not residual < 1e-2:
        raise CalibrationError(f"loaded-line calibration residual {residual:.3g} exceeds 1%", residual=residual)
    return candidate


def lk_of_current(lk0, i, i_star):
    """Kinetic inductance per length at current ``i`` (quadratic term only)."""
    if not i_star > 0:
        raise DomainError("i_star must be positive")
    return lk0 * (1 + np.square(i) / i_star**2)


class IStarFit(NamedTuple):
    i_star: float
    f0: float
    residual: float
    diagnostic: str


def fit_istar(stopband_centers) -> IStarFit:
    """Fit ``f(i) = f0 / sqrt(1 + i^2 / I*^2)`` to (DC current, stopband centre) pairs.

    Returns ``i_star = inf`` with a diagnostic when the data show no
    resolvable downward shift.
    """
    data = np.asarray(stopband_centers, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 3:
        raise FitError("need at least three (current, frequency) pairs")
    i, f = data[:, 0], data[:, 1]
    if np.unique(np.abs(i)).size < 2:
        raise FitError("all data points share the same current magnitude")
    if np.any(f <= 0):
        raise FitError("stopband frequencies must be positive")

    # Linear seed: 1/f^2 = (1 + u i^2) / f0^2.
    i2 = i**2
    slope, intercept = np.polyfit(i2, 1.0 / f**2, 1)
    f0_guess = 1.0 / math.sqrt(intercept) if intercept > 0 else f.max()
    u_guess = max(slope / intercept, 0.0) if intercept > 0 else 0.0
    u_scale = 1.0 / i2.max()

    def resid(p):
        f0, u = p[0] * f0_guess, p[1] * u_scale
        return (f0 / np.sqrt(1 + u * i2) - f) / f0_guess

    sol = least_squares(resid, [1.0, u_guess / u_scale], bounds=([0.0, 0.0], [np.inf, np.inf]), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    f0 = sol.x[0] * f0_guess
    u = sol.x[1] * u_scale
    rms = float(np.sqrt(np.mean((f0 / np.sqrt(1 + u * i2) - f) ** 2)))
    # Fractional drop at the largest current; compare with scatter and float resolution.
    shift = 1 - 1 / math.sqrt(1 + u * i2.max())
    if shift <= max(1e-9, 3 * rms / f0):
        return IStarFit(math.inf, f0, rms, "no stopband shift resolved; nonlinearity unobservable")
    return IStarFit(1.0 / math.sqrt(u), f0, rms, "ok")
