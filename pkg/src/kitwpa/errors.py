"""Exception and warning types raised by the toolkit."""


class KitwpaError(Exception):
    """Base class for all toolkit errors."""


class DomainError(KitwpaError, ValueError):
    """Input outside the mathematical domain of an operation."""


class SingularFrequencyError(DomainError):
    """Frequency coincides with a stub admittance pole."""


class CalibrationError(KitwpaError):
    """Loaded-line calibration did not converge.

    ``residual`` holds the worst relative mismatch reached.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class FitError(KitwpaError):
    """Degenerate data passed to a fit."""


class EvanescentToneError(DomainError):
    """A tone lies inside a stopband (or outside the tabulated range)."""

    def __init__(self, message, tone=None, freq=None):
        super().__init__(message)
        self.tone = tone
        self.freq = freq


class DegenerateToneError(DomainError):
    """Two tones of a mixing set share a frequency."""


class StiffnessError(KitwpaError):
    """Step size underflow in the adaptive integrator."""

    def __init__(self, message, z=None, step=None):
        super().__init__(message)
        self.z = z
        self.step = step


class OscillationError(KitwpaError):
    """Round-trip gain at or above the oscillation threshold."""


class InvalidYFactorError(DomainError):
    """Y-factor at or below unity."""


class AlignmentError(KitwpaError):
    """Traces sampled on different frequency grids."""


class TraceFormatError(KitwpaError):
    """Malformed trace file.  ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(KitwpaError):
    """Invalid run configuration.  ``problems`` lists every field-level issue."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CalibrationAnomalyWarning(UserWarning):
    """System noise came out negative (inverted or corrupted hot/cold data)."""


class BelowVacuumWarning(UserWarning):
    """Extracted added noise is negative."""


class EvanescentToneWarning(UserWarning):
    """A mixing product was dropped because it cannot propagate."""
