"""Leeson phase-noise model and the VCMO figure of merit."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.constants import k as K_B

from .errors import DomainError
from .resonator import MotionalBranch

T0 = 290.0  # K, noise reference temperature


def _pos(name, value):
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise DomainError(f"{name} must be positive and finite, got {value!r}", field=name)
    return value


@dataclass(frozen=True)
class LeesonParams:
    noise_factor_db: float
    p_sig: float
    q_loaded: float
    f_flicker: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "noise_factor_db", float(self.noise_factor_db))
        object.__setattr__(self, "p_sig", _pos("p_sig", self.p_sig))
        object.__setattr__(self, "q_loaded", _pos("q_loaded", self.q_loaded))
        ff = float(self.f_flicker)
        if not math.isfinite(ff) or ff < 0.0:
            raise DomainError("f_flicker must be >= 0", field="f_flicker")
        object.__setattr__(self, "f_flicker", ff)

    @property
    def noise_factor(self) -> float:
        return 10.0 ** (self.noise_factor_db / 10.0)

    def leeson_corner(self, f_carrier: float) -> float:
        """Half-bandwidth f_carrier/(2*Q_L) where the 1/f^2 region ends."""
        return f_carrier / (2.0 * self.q_loaded)


@dataclass(frozen=True)
class PhaseNoisePoint:
    offset: float
    value: float


def loaded_q(branch: MotionalBranch, r_external: float) -> float:
    """Q of a series branch loaded by ``r_external`` ohms: q*r_m/(r_m + r_ext)."""
    r_external = float(r_external)
    if not math.isfinite(r_external) or r_external < 0.0:
        raise DomainError("r_external must be >= 0", field="r_external")
    return branch.q * branch.r_m / (branch.r_m + r_external)


def _leeson_array(p: LeesonParams, f_carrier: float, offset: np.ndarray) -> np.ndarray:
    floor = 2.0 * p.noise_factor * K_B * T0 / p.p_sig
    lee = 1.0 + (f_carrier / (2.0 * p.q_loaded * offset)) ** 2
    flick = 1.0 + p.f_flicker / offset
    return 10.0 * np.log10(floor * lee * flick)


def leeson(p: LeesonParams, f_carrier: float, offset: float) -> float:
    """Single-sideband phase noise L(offset) in dBc/Hz."""
    f_carrier = _pos("f_carrier", f_carrier)
    offset = _pos("offset", offset)
    return float(_leeson_array(p, f_carrier, np.array(offset)))


def noise_floor(p: LeesonParams) -> float:
    """Far-out asymptote 10*log10(2*F*k*T/p_sig) in dBc/Hz."""
    return 10.0 * math.log10(2.0 * p.noise_factor * K_B * T0 / p.p_sig)


def phase_noise_profile(p: LeesonParams, f_carrier: float,
                        offset_grid: Sequence[float]) -> list[PhaseNoisePoint]:
    f_carrier = _pos("f_carrier", f_carrier)
    off = np.asarray(offset_grid, dtype=float).ravel()
    if off.size == 0:
        raise DomainError("offset grid is empty", field="offset_grid")
    if not np.all(np.isfinite(off)) or np.any(off <= 0.0):
        raise DomainError("offsets must be positive", field="offset_grid")
    if np.any(np.diff(off) <= 0.0):
        raise DomainError("offsets must be strictly ascending", field="offset_grid")
    vals = _leeson_array(p, f_carrier, off)
    return [PhaseNoisePoint(float(o), float(v)) for o, v in zip(off, vals)]


def fom_vcmo(l_dbchz: float, f_o: float, offset: float, p_dc: float) -> float:
    """-L + 20*log10(f_o/offset) - 10*log10(p_dc/1 mW), in dBc/Hz."""
    l_dbchz = float(l_dbchz)
    if not math.isfinite(l_dbchz):
        raise DomainError("l_dbchz must be finite", field="l_dbchz")
    f_o = _pos("f_o", f_o)
    offset = _pos("offset", offset)
    p_dc = _pos("p_dc", p_dc)
    return -l_dbchz + 20.0 * math.log10(f_o / offset) - 10.0 * math.log10(p_dc / 1e-3)


def calibrate_leeson(anchor_dbchz: float, anchor_offset: float, f_carrier: float,
                     q_loaded: float, f_flicker: float = 1e3,
                     noise_factor_db: float = 3.0) -> LeesonParams:
    """Choose p_sig so that the model passes through one measured point.

    The noise factor and flicker corner are held fixed; only the carrier power
    is solved for, so the result is a fit to the anchor, not a prediction.
    """
    anchor_offset = _pos("anchor_offset", anchor_offset)
    f_carrier = _pos("f_carrier", f_carrier)
    probe = LeesonParams(noise_factor_db, 1.0, q_loaded, f_flicker)
    at_one_watt = leeson(probe, f_carrier, anchor_offset)
    p_sig = 10.0 ** ((at_one_watt - float(anchor_dbchz)) / 10.0)
    return LeesonParams(noise_factor_db, p_sig, q_loaded, f_flicker)


def local_slope(p: LeesonParams, f_carrier: float, lo: float, hi: float) -> float:
    """Average slope in dB/decade between offsets ``lo`` and ``hi``."""
    return (leeson(p, f_carrier, hi) - leeson(p, f_carrier, lo)) / math.log10(hi / lo)
