"""Multi-branch modified Butterworth-Van Dyke (MBVD) resonator model.

The device is a static capacitance ``c_0`` in parallel with one series RLC
"motional" branch per acoustic overtone::

    Y(f) = j*w*c_0 + sum_k 1 / (r_k + j*w*l_k + 1/(j*w*c_k))

Branch impedances are evaluated as ``r*(1 + j*q*(f/f_m - f_m/f))`` which is
algebraically identical to the RLC form but keeps the reactance cancellation
at ``f_m`` exact in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError

TWO_PI = 2.0 * math.pi

MAX_BRANCHES = 64
MIN_BRANCH_SEPARATION = 1e3  # Hz

# Ten overtones of the lateral overtone bulk acoustic resonator:
# (f_m [Hz], unloaded Q, R_m [ohm]).
LOBAR_TONES: tuple[tuple[float, float, float], ...] = (
    (305e6, 1650.0, 122.0),
    (325e6, 1671.0, 225.0),
    (345e6, 1945.0, 107.0),
    (370e6, 1825.0, 115.0),
    (390e6, 1908.0, 125.0),
    (415e6, 1970.0, 130.0),
    (435e6, 2608.0, 127.0),
    (460e6, 2050.0, 147.0),
    (480e6, 2202.0, 167.0),
    (505e6, 3000.0, 175.0),
)

# Static capacitance is not measured for the preset device; this value is an
# assumption (see README) and can be overridden wherever the preset is built.
LOBAR_C0_DEFAULT = 1.5e-12
LOBAR_C0_ASSUMED = True


def _check_positive(name: str, value: float) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"{name} must be a real number, got {value!r}", field=name) from None
    if not math.isfinite(value) or value <= 0.0:
        raise DomainError(f"{name} must be positive and finite, got {value!r}", field=name)
    return value


def _check_freq(f):
    """Validate and return frequency as float or float array (all > 0)."""
    arr = np.asarray(f, dtype=float)
    if arr.size == 0:
        raise DomainError("empty frequency input", field="f")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("frequency must be positive and finite", field="f")
    return arr


@dataclass(frozen=True)
class MotionalBranch:
    """One series RLC branch; ``l_m`` and ``c_m`` are derived on construction."""

    f_m: float
    q: float
    r_m: float
    l_m: float = field(init=False)
    c_m: float = field(init=False)

    def __post_init__(self):
        f_m = _check_positive("f_m", self.f_m)
        q = _check_positive("q", self.q)
        r_m = _check_positive("r_m", self.r_m)
        object.__setattr__(self, "f_m", f_m)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r_m", r_m)
        l_m = q * r_m / (TWO_PI * f_m)
        object.__setattr__(self, "l_m", l_m)
        object.__setattr__(self, "c_m", 1.0 / ((TWO_PI * f_m) ** 2 * l_m))

    @property
    def bandwidth(self) -> float:
        """3 dB bandwidth f_m/q in Hz."""
        return self.f_m / self.q


def branch_from_spec(f_m: float, q: float, r_m: float) -> MotionalBranch:
    """Build a motional branch from series frequency, unloaded Q and resistance.

    Raises:
        DomainError: if any input is non-positive or non-finite; ``field``
            names the offending argument.
    """
    return MotionalBranch(f_m, q, r_m)


@dataclass(frozen=True)
class MbvdResonator:
    """Static capacitance plus an ordered tuple of motional branches."""

    c_0: float
    branches: tuple[MotionalBranch, ...] = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "c_0", _check_positive("c_0", self.c_0))
        branches = tuple(self.branches)
        object.__setattr__(self, "branches", branches)
        if len(branches) > MAX_BRANCHES:
            raise DomainError(
                f"at most {MAX_BRANCHES} branches supported, got {len(branches)}", field="branches"
            )
        for k in range(1, len(branches)):
            lo, hi = branches[k - 1].f_m, branches[k].f_m
            if hi <= lo:
                raise DomainError(
                    f"branch f_m must be strictly increasing (branch {k}: {hi!r} <= {lo!r})",
                    field="branches",
                )
            if hi - lo < MIN_BRANCH_SEPARATION:
                raise DomainError(
                    f"branches {k - 1} and {k} closer than {MIN_BRANCH_SEPARATION:g} Hz",
                    field="branches",
                )

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([b.f_m for b in self.branches])

    @property
    def center_frequency(self) -> float:
        """Mean series frequency of the overtone family (f_c)."""
        if not self.branches:
            raise DomainError("resonator has no branches", field="branches")
        return float(np.mean(self.frequencies))

    @property
    def spacing(self) -> float:
        """Mean adjacent overtone spacing (delta_f); needs >= 2 branches."""
        if len(self.branches) < 2:
            raise DomainError("spacing needs at least two branches", field="branches")
        return float(np.mean(np.diff(self.frequencies)))

    def nearest_branch(self, f: float) -> int:
        """0-based index of the branch whose f_m is closest to ``f``."""
        if not self.branches:
            raise DomainError("resonator has no branches", field="branches")
        return int(np.argmin(np.abs(self.frequencies - f)))

    def local_spacing(self, index: int) -> float:
        """Mean distance from branch ``index`` to its immediate neighbours."""
        fm = self.frequencies
        gaps = []
        if index > 0:
            gaps.append(fm[index] - fm[index - 1])
        if index < len(fm) - 1:
            gaps.append(fm[index + 1] - fm[index])
        if not gaps:
            return math.inf
        return float(np.mean(gaps))

    def with_c0(self, c_0: float) -> "MbvdResonator":
        return MbvdResonator(c_0, self.branches, self.label)


@dataclass(frozen=True)
class ModeMetrics:
    f_s: float
    f_p: float
    k_eff_sq: float
    fom: float


def branch_admittance(b: MotionalBranch, f):
    """Admittance of one motional branch at ``f`` (scalar or array), in S."""
    arr = _check_freq(f)
    u = arr / b.f_m - b.f_m / arr
    y = 1.0 / (b.r_m * (1.0 + 1j * b.q * u))
    return complex(y) if np.ndim(y) == 0 else y


def resonator_admittance(r: MbvdResonator, f):
    """Total admittance j*w*c_0 + sum of branch admittances."""
    arr = _check_freq(f)
    y = 1j * TWO_PI * arr * r.c_0
    for b in r.branches:
        u = arr / b.f_m - b.f_m / arr
        y = y + 1.0 / (b.r_m * (1.0 + 1j * b.q * u))
    return complex(y) if np.ndim(y) == 0 else y


def mode_metrics(r: MbvdResonator, branch_index: int) -> ModeMetrics:
    """Series/parallel frequencies, coupling and FoM of one branch.

    Uses the single-branch antiresonance f_p = f_s*sqrt(1 + c_m/c_0); see
    :func:`parallel_resonance` for the full-network value.
    """
    if not isinstance(branch_index, (int, np.integer)) or not 0 <= branch_index < len(r.branches):
        raise IndexError(f"branch_index {branch_index!r} out of range for {len(r.branches)} branches")
    b = r.branches[branch_index]
    f_s = b.f_m
    ratio = b.c_m / r.c_0
    f_p = f_s * math.sqrt(1.0 + ratio)
    k_sq = ratio / (1.0 + ratio)  # == (f_p^2 - f_s^2)/f_p^2 without cancellation
    return ModeMetrics(f_s=f_s, f_p=f_p, k_eff_sq=k_sq, fom=b.q * k_sq)


def parallel_resonance(r: MbvdResonator, branch_index: int, points: int = 4001) -> float | None:
    """Full-network antiresonance of one branch: the root of Im(Y) = 0 above f_s.

    Neighbouring branches and c_0 are all included. Returns None when the
    susceptance never crosses zero near the mode (low Q*k^2 devices).
    """
    b = r.branches[branch_index]
    single = mode_metrics(r, branch_index).f_p
    hi = single + 20.0 * b.bandwidth
    f = np.linspace(b.f_m, hi, points)
    im = resonator_admittance(r, f).imag
    up = np.nonzero((im[:-1] < 0.0) & (im[1:] >= 0.0))[0]
    if up.size == 0:
        return None
    k = up[-1]
    return float(brentq(lambda x: resonator_admittance(r, x).imag, f[k], f[k + 1], xtol=1e-6))


def _check_grid(f_grid) -> np.ndarray:
    arr = np.asarray(f_grid, dtype=float).ravel()
    if arr.size == 0:
        raise DomainError("frequency grid is empty", field="f_grid")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("frequency grid must be positive and finite", field="f_grid")
    if np.any(np.diff(arr) <= 0.0):
        raise DomainError("frequency grid must be strictly ascending", field="f_grid")
    return arr


def admittance_sweep(r: MbvdResonator, f_grid: Sequence[float]) -> list[tuple[float, complex]]:
    """Evaluate the resonator on an ascending grid; returns ``[(f, Y), ...]``."""
    arr = _check_grid(f_grid)
    y = np.atleast_1d(resonator_admittance(r, arr))
    return [(float(fi), complex(yi)) for fi, yi in zip(arr, y)]


def lobar_table1(c_0: float = LOBAR_C0_DEFAULT) -> MbvdResonator:
    """Ten-overtone preset; ``c_0`` defaults to an assumed value."""
    branches = tuple(branch_from_spec(*row) for row in LOBAR_TONES)
    return MbvdResonator(c_0, branches, label="lobar_table1")


PRESETS = {"lobar_table1": lobar_table1}


def get_preset(name: str, **kwargs) -> MbvdResonator:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise DomainError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}", field="preset"
        ) from None
    return factory(**kwargs)
