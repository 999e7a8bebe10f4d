"""Varactor-tuned LC tank modelled as a pi two-port.

Topology: a parallel L || C_P arm in series between the ports, with one C_S
from each port to ground. C_P is a reverse-biased varactor.

Resonances:
    f_p_t  arm pole, 1/(2*pi*sqrt(L*C_P)); independent of C_S.
    f_s_t  ring resonance of the arm with the two C_S in series through ground,
           1/(2*pi*sqrt(L*(C_P + C_S/2))).

Between them the port-to-port (ring) reactance is inductive.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import BiasRangeError, DomainError, TankPoleError

TWO_PI = 2.0 * math.pi

# Relative distance from f_p_t inside which evaluations are flagged as poles.
POLE_RTOL = 1e-6

DEFAULT_L = 18e-9
DEFAULT_C_S = 9e-12
DEFAULT_REGION_TOL = 0.01


def _positive(name, value):
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise DomainError(f"{name} must be positive and finite, got {value!r}", field=name)
    return value


@dataclass(frozen=True)
class VaractorModel:
    """Graded-junction capacitance C(V) = c_j0/(1 + V/v_j)^m on [v_min, v_max]."""

    c_j0: float = 22.62e-12
    v_j: float = 0.7
    m: float = math.log(22.62 / 1.3) / math.log(1.0 + 8.0 / 0.7)
    v_min: float = 0.0
    v_max: float = 8.0

    def __post_init__(self):
        for name in ("c_j0", "v_j", "m"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))
        if not float(self.v_min) < float(self.v_max):
            raise DomainError("v_min must be < v_max", field="v_min")
        if self.v_min <= -self.v_j:
            raise DomainError("v_min must exceed -v_j", field="v_min")

    @classmethod
    def from_endpoints(cls, c_lo: float, c_hi: float, v_lo: float = 0.0, v_hi: float = 8.0,
                       v_j: float = 0.7) -> "VaractorModel":
        """Solve ``c_j0`` and ``m`` so that C(v_lo) = c_lo and C(v_hi) = c_hi."""
        if not c_lo > c_hi > 0:
            raise DomainError("need c_lo > c_hi > 0", field="c_hi")
        m = math.log(c_lo / c_hi) / math.log((1.0 + v_hi / v_j) / (1.0 + v_lo / v_j))
        c_j0 = c_lo * (1.0 + v_lo / v_j) ** m
        return cls(c_j0=c_j0, v_j=v_j, m=m, v_min=v_lo, v_max=v_hi)

    @property
    def interval(self) -> tuple[float, float]:
        return (self.v_min, self.v_max)

    def capacitance(self, bias: float) -> float:
        return varactor_capacitance(self, bias)


@dataclass(frozen=True)
class FixedCapacitor:
    """Bias-independent stand-in for a varactor (useful for isolating the tank)."""

    c: float
    v_min: float = 0.0
    v_max: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "c", _positive("c", self.c))
        if not float(self.v_min) < float(self.v_max):
            raise DomainError("v_min must be < v_max", field="v_min")

    @property
    def interval(self) -> tuple[float, float]:
        return (self.v_min, self.v_max)

    def capacitance(self, bias: float) -> float:
        _check_bias(self, bias)
        return self.c


def _check_bias(v, bias) -> float:
    try:
        b = float(bias)
    except (TypeError, ValueError):
        raise DomainError(f"bias must be a number, got {bias!r}", field="bias") from None
    if not (v.v_min <= b <= v.v_max):
        raise BiasRangeError(b, (v.v_min, v.v_max))
    return b


def varactor_capacitance(v: VaractorModel, bias: float) -> float:
    """Junction capacitance at ``bias`` volts.

    Raises:
        BiasRangeError: bias outside [v_min, v_max]; carries the interval.
    """
    b = _check_bias(v, bias)
    return v.c_j0 / (1.0 + b / v.v_j) ** v.m


@dataclass(frozen=True)
class TankConfig:
    """Pi tank: L || C_P series arm, C_S to ground at each port.

    ``r_l`` is an optional series resistance on the inductor (0 = lossless).
    """

    l: float = DEFAULT_L
    c_s: float = DEFAULT_C_S
    varactor: VaractorModel | FixedCapacitor = field(default_factory=VaractorModel)
    r_l: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "l", _positive("l", self.l))
        object.__setattr__(self, "c_s", _positive("c_s", self.c_s))
        r_l = float(self.r_l)
        if not math.isfinite(r_l) or r_l < 0.0:
            raise DomainError(f"r_l must be >= 0, got {r_l!r}", field="r_l")
        object.__setattr__(self, "r_l", r_l)

    def c_p(self, bias: float) -> float:
        return self.varactor.capacitance(bias)


@dataclass(frozen=True)
class TankResonances:
    f_s_t: float
    f_p_t: float

    @property
    def bw(self) -> float:
        return self.f_p_t - self.f_s_t


class Region(enum.Enum):
    R1 = "R1"  # below f_s_t: phase condition cannot be met
    R2 = "R2"  # aligned with f_s_t: maximum coupling
    R3 = "R3"  # inductive band between f_s_t and f_p_t
    R4 = "R4"  # at or above f_p_t

    def __str__(self):
        return self.value


def _arm_impedance(t: TankConfig, c_p: float, w):
    if t.r_l == 0.0:
        return 1j * w * t.l / (1.0 - w * w * t.l * c_p)
    zl = t.r_l + 1j * w * t.l
    return zl / (1.0 + 1j * w * c_p * zl)


def _pole_mask(t: TankConfig, c_p: float, f) -> np.ndarray:
    if t.r_l != 0.0:
        return np.zeros(np.shape(f), dtype=bool)
    f_p = 1.0 / (TWO_PI * math.sqrt(t.l * c_p))
    return np.abs(np.asarray(f) - f_p) <= POLE_RTOL * f_p


def abcd_entries(t: TankConfig, bias: float, f, *, pole="raise"):
    """Vectorized (A, B, C, D) arrays.

    ``pole="raise"`` raises :class:`TankPoleError` if any frequency is within
    the pole band; ``pole="nan"`` returns NaN entries at those points instead.
    """
    c_p = t.c_p(bias)
    f = np.asarray(f, dtype=float)
    if np.any(~np.isfinite(f)) or np.any(f <= 0.0):
        raise DomainError("frequency must be positive and finite", field="f")
    mask = _pole_mask(t, c_p, f)
    if np.any(mask):
        if pole == "raise":
            f_bad = float(np.atleast_1d(f)[np.atleast_1d(mask)][0])
            raise TankPoleError(f_bad, 1.0 / (TWO_PI * math.sqrt(t.l * c_p)))
    w = TWO_PI * f
    with np.errstate(divide="ignore", invalid="ignore"):
        z = _arm_impedance(t, c_p, w)
        y = 1j * w * t.c_s
        zy = z * y
        a = 1.0 + zy
        b = z
        c = y * (2.0 + zy)
        d = a
    if np.any(mask):
        nan = complex(np.nan, np.nan)
        a, b, c, d = (np.where(mask, nan, x) for x in (a, b, c, d))
    return a, b, c, d


def tank_abcd(t: TankConfig, bias: float, f: float) -> np.ndarray:
    """2x2 transmission matrix shunt(C_S) @ series(Z_arm) @ shunt(C_S).

    Raises:
        TankPoleError: ``f`` within 1e-6 relative of the arm pole.
    """
    f = float(f)
    if not f > 0.0:
        raise DomainError("frequency must be positive", field="f")
    a, b, c, d = abcd_entries(t, bias, f)
    return np.array([[a, b], [c, d]], dtype=complex)


def tank_transfer(t: TankConfig, bias: float, f, z_source: complex = 0.0, z_load: complex = 50.0,
                  *, pole="raise"):
    """Voltage gain V_load/V_source of the terminated tank.

    ``f`` may be an array; ``z_load`` may be an array broadcastable with it.
    """
    z_s = np.asarray(z_source, dtype=complex)
    z_l = np.asarray(z_load, dtype=complex)
    if np.any(z_s.real < 0.0):
        raise DomainError("Re(z_source) must be >= 0", field="z_source")
    if np.any(z_l.real <= 0.0):
        raise DomainError("Re(z_load) must be > 0", field="z_load")
    a, b, c, d = abcd_entries(t, bias, f, pole=pole)
    with np.errstate(invalid="ignore"):
        g = z_l / (a * z_l + b + c * z_s * z_l + d * z_s)
    return complex(g) if np.ndim(g) == 0 else g


def ring_reactance(t: TankConfig, bias: float, f):
    """Reactance of the arm in series with both C_S through ground.

    Negative (capacitive) below f_s_t and above f_p_t, positive in between.
    For a lossy tank the imaginary part of the ring impedance is returned.
    """
    c_p = t.c_p(bias)
    f = np.asarray(f, dtype=float)
    w = TWO_PI * f
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.imag(_arm_impedance(t, c_p, w)) - 2.0 / (w * t.c_s)
    return float(x) if x.ndim == 0 else x


def tank_resonances(t: TankConfig, bias: float) -> TankResonances:
    """Arm pole f_p_t and ring resonance f_s_t (found as a reactance sign change)."""
    c_p = t.c_p(bias)
    f_p = 1.0 / (TWO_PI * math.sqrt(t.l * c_p))
    f_closed = 1.0 / (TWO_PI * math.sqrt(t.l * (c_p + 0.5 * t.c_s)))
    # Lossless ring reactance rises monotonically from -inf (DC) to +inf (f_p_t).
    lossless = TankConfig(t.l, t.c_s, t.varactor)
    lo, hi = f_closed * 0.5, f_p * (1.0 - 1e-9)
    f_s = brentq(lambda x: ring_reactance(lossless, bias, x), lo, hi, xtol=1e-9, rtol=1e-15)
    if abs(f_s - f_closed) > 1e-6 * f_closed:  # pragma: no cover - guards the closed form
        raise ArithmeticError(f"numeric f_s_t {f_s} disagrees with closed form {f_closed}")
    return TankResonances(f_s_t=float(f_s), f_p_t=f_p)


def classify_region(f: float, res: TankResonances, tol: float = DEFAULT_REGION_TOL) -> Region:
    """Place ``f`` in one of the four regions relative to f_s_t and f_p_t."""
    if not f > 0.0:
        raise DomainError("frequency must be positive", field="f")
    if not 0.0 < tol < 0.1:
        raise DomainError("tol must be in (0, 0.1)", field="tol")
    if f >= res.f_p_t:
        return Region.R4
    if f < res.f_s_t * (1.0 - tol):
        return Region.R1
    if abs(f - res.f_s_t) <= tol * res.f_s_t:
        return Region.R2
    return Region.R3
