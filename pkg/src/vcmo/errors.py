"""Exception hierarchy shared by all vcmo modules."""

from __future__ import annotations


class VcmoError(Exception):
    """Base class for every error raised by this package."""


class DomainError(VcmoError, ValueError):
    """An input lies outside the domain of an operation.

    Attributes:
        field: name of the offending argument or config key, if known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class BiasRangeError(DomainError):
    """A varactor bias is outside the model's valid interval."""

    def __init__(self, bias: float, interval: tuple[float, float]):
        lo, hi = interval
        super().__init__(f"bias {bias!r} V outside valid range [{lo}, {hi}] V", field="bias")
        self.bias = bias
        self.interval = (lo, hi)


class TankPoleError(VcmoError, ArithmeticError):
    """Evaluation requested at (or numerically on top of) the tank arm pole."""

    def __init__(self, f: float, f_pole: float):
        super().__init__(f"frequency {f!r} Hz is at the tank arm pole {f_pole!r} Hz")
        self.f = f
        self.f_pole = f_pole


class DegeneratePhaseError(VcmoError):
    """Loop phase is identically zero over the scanned band (no isolated crossings)."""


class GridTooCoarseError(DomainError):
    """Frequency grid cannot resolve the narrowest resonator mode."""

    def __init__(self, grid_step: float, required_step: float):
        super().__init__(
            f"grid_step {grid_step!r} Hz too coarse; need <= {required_step!r} Hz "
            "(8 samples per narrowest 3 dB bandwidth)",
            field="grid_step",
        )
        self.grid_step = grid_step
        self.required_step = required_step


class FitError(VcmoError):
    """Fitting could not proceed (bad data, non-finite residual, ...)."""


class ConfigError(VcmoError, ValueError):
    """Invalid or incomplete project configuration."""

    def __init__(self, message: str, keys: list[str] | None = None):
        super().__init__(message)
        self.keys = list(keys or [])


class DataFormatError(VcmoError, ValueError):
    """Malformed data file (CSV or Touchstone)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
