"""Closed-loop model: gain stages -> tank -> series resonator -> back to stage 1.

The loop is broken at the input of the first stage. Going around it:

* each stage multiplies by ``a0/(1 + j f/f_pole)``;
* between stages the output resistance of stage k and the input resistance of
  stage k+1 form a resistive divider;
* the last stage drives the tank through its ``r_out``; the tank is loaded by
  the resonator in series with the first stage's ``r_in``;
* the resonator and ``r_in`` of stage 1 form the final (frequency selective)
  divider ``r_in/(Z_res + r_in)``.

The tank or resonator may be omitted (``None``) for a through connection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DegeneratePhaseError, DomainError, GridTooCoarseError, TankPoleError
from .resonator import MbvdResonator, _check_grid, lobar_table1, resonator_admittance
from .tank import TankConfig, abcd_entries

TWO_PI = 2.0 * math.pi

SAMPLES_PER_BANDWIDTH = 8
ROOT_XTOL = 1e-4  # Hz
SLOPE_STEP = 0.5  # Hz, half-width of the centered phase difference
# Refined roots whose wrapped phase is larger than this sit on a discontinuity
# (e.g. a transmission zero) rather than a genuine crossing.
ROOT_PHASE_ATOL = 1e-3
# Brackets whose endpoint gain is far below unity are skipped by the
# oscillation predictor; |G| cannot change this much within one grid step.
PREFILTER_GAIN = 0.5


@dataclass(frozen=True)
class GainStage:
    """Unilateral single-pole amplifier with resistive ports."""

    a0: float
    f_pole: float | None = None
    r_out: float = 100.0
    r_in: float = 1000.0

    def __post_init__(self):
        a0 = float(self.a0)
        if not math.isfinite(a0) or a0 == 0.0:
            raise DomainError("a0 must be finite and non-zero", field="a0")
        object.__setattr__(self, "a0", a0)
        if self.f_pole is not None:
            fp = float(self.f_pole)
            if not math.isfinite(fp) or fp <= 0.0:
                raise DomainError("f_pole must be positive when given", field="f_pole")
            object.__setattr__(self, "f_pole", fp)
        r_out, r_in = float(self.r_out), float(self.r_in)
        if not math.isfinite(r_out) or r_out < 0.0:
            raise DomainError("r_out must be >= 0", field="r_out")
        if not math.isfinite(r_in) or r_in <= 0.0:
            raise DomainError("r_in must be > 0", field="r_in")
        object.__setattr__(self, "r_out", r_out)
        object.__setattr__(self, "r_in", r_in)

    def response(self, f):
        if self.f_pole is None:
            return self.a0 + 0j * np.asarray(f, dtype=float)
        return self.a0 / (1.0 + 1j * np.asarray(f, dtype=float) / self.f_pole)

    def scaled(self, g: float) -> "GainStage":
        return GainStage(self.a0 * g, self.f_pole, self.r_out, self.r_in)


# Calibrated default stage pair: the first stage inverts so that, together
# with the 180 degree shift of the pi tank at f_s_t, the loop closes at 0 mod 2pi.
DEFAULT_STAGES = (
    GainStage(a0=-4.0, f_pole=3e9, r_out=100.0, r_in=100.0),
    GainStage(a0=4.0, f_pole=3e9, r_out=150.0, r_in=1000.0),
)


@dataclass(frozen=True)
class LoopConfig:
    stages: tuple[GainStage, ...]
    tank: TankConfig | None = field(default_factory=TankConfig)
    resonator: MbvdResonator | None = field(default_factory=lobar_table1)

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages:
            raise DomainError("loop needs at least one gain stage", field="stages")
        if not all(isinstance(s, GainStage) for s in stages):
            raise DomainError("stages must be GainStage instances", field="stages")
        object.__setattr__(self, "stages", stages)

    def scaled(self, g: float) -> "LoopConfig":
        """Copy whose open-loop gain is multiplied by ``g``.

        Each of the N stages is scaled by ``g**(1/N)`` so the loop gain, and
        hence every gain margin, moves by exactly ``20*log10(g)`` dB.
        """
        g = float(g)
        if not math.isfinite(g) or g <= 0.0:
            raise DomainError(f"gain scale must be positive, got {g!r}", field="g")
        per_stage = g ** (1.0 / len(self.stages))
        return LoopConfig(tuple(s.scaled(per_stage) for s in self.stages), self.tank, self.resonator)

    def default_window(self) -> tuple[float, float]:
        """Search band [0.9 f_min, 1.1 f_max] around the resonator branches."""
        if self.resonator is None or not self.resonator.branches:
            raise DomainError("no resonator branches; give f_lo/f_hi explicitly", field="f_lo")
        fm = self.resonator.frequencies
        return 0.9 * float(fm[0]), 1.1 * float(fm[-1])


def default_loop_config(resonator: MbvdResonator | None = None) -> LoopConfig:
    return LoopConfig(DEFAULT_STAGES, TankConfig(), resonator or lobar_table1())


@dataclass(frozen=True)
class OscillationSolution:
    """Small-signal Barkhausen solution; ``mode_index`` is 1-based."""

    f_osc: float
    mode_index: int
    bias: float
    gain_margin_db: float
    phase_slope: float


@dataclass(frozen=True)
class PhaseZero:
    f: float
    gain: float
    phase_slope: float


@dataclass(frozen=True)
class TuningPoint:
    bias: float
    solution: OscillationSolution | None
    hop: bool = False


def _loop_array(cfg: LoopConfig, bias: float, f: np.ndarray) -> np.ndarray:
    """Loop gain on an array; NaN at tank pole points."""
    f = np.asarray(f, dtype=float)
    g = np.ones(f.shape, dtype=complex)
    stages = cfg.stages
    for k, s in enumerate(stages):
        g = g * s.response(f)
        if k + 1 < len(stages):
            nxt = stages[k + 1]
            g = g * (nxt.r_in / (nxt.r_in + s.r_out))
    r_in = stages[0].r_in
    z_s = stages[-1].r_out
    if cfg.resonator is not None:
        z_res = 1.0 / resonator_admittance(cfg.resonator, f)
    else:
        z_res = np.zeros(f.shape, dtype=complex)
    z_l = z_res + r_in
    with np.errstate(divide="ignore", invalid="ignore"):
        if cfg.tank is not None:
            a, b, c, d = abcd_entries(cfg.tank, bias, f, pole="nan")
            g = g * z_l / (a * z_l + b + c * z_s * z_l + d * z_s)
        else:
            g = g * z_l / (z_l + z_s)
        return g * (r_in / z_l)


def _check_bias(cfg: LoopConfig, bias: float) -> float:
    if cfg.tank is not None:
        cfg.tank.c_p(bias)  # raises BiasRangeError
    return float(bias)


def loop_transfer(cfg: LoopConfig, bias: float, f):
    """Complex open-loop gain at ``f`` (scalar or array).

    Scalar evaluation on the tank pole raises :class:`TankPoleError`; array
    evaluation marks those points NaN.
    """
    _check_bias(cfg, bias)
    arr = np.asarray(f, dtype=float)
    if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("frequency must be positive and finite", field="f")
    g = _loop_array(cfg, bias, np.atleast_1d(arr))
    if arr.ndim == 0:
        val = complex(g[0])
        if not np.isfinite(val.real):
            c_p = cfg.tank.c_p(bias)
            raise TankPoleError(float(arr), 1.0 / (TWO_PI * math.sqrt(cfg.tank.l * c_p)))
        return val
    return g


def required_grid_step(cfg: LoopConfig, f_lo: float, f_hi: float) -> float | None:
    """Largest admissible grid step: min(f_m/Q)/8 over modes inside [f_lo, f_hi]."""
    if cfg.resonator is None:
        return None
    bws = [b.bandwidth for b in cfg.resonator.branches if f_lo <= b.f_m <= f_hi]
    if not bws:
        return None
    return min(bws) / SAMPLES_PER_BANDWIDTH


def _grid(cfg, f_lo, f_hi, grid_step):
    f_lo, f_hi = float(f_lo), float(f_hi)
    if not (0.0 < f_lo < f_hi) or not math.isfinite(f_hi):
        raise DomainError("need 0 < f_lo < f_hi", field="f_lo")
    need = required_grid_step(cfg, f_lo, f_hi)
    if grid_step is None:
        grid_step = need if need is not None else (f_hi - f_lo) / 1000.0
    grid_step = float(grid_step)
    if not grid_step > 0.0:
        raise DomainError("grid_step must be positive", field="grid_step")
    if need is not None and grid_step > need * (1.0 + 1e-12):
        raise GridTooCoarseError(grid_step, need)
    n = int(math.ceil((f_hi - f_lo) / grid_step)) + 1
    return np.linspace(f_lo, f_hi, n)


def _scalar_phase(cfg, bias, x):
    g = _loop_array(cfg, bias, np.array([x]))[0]
    return math.atan2(g.imag, g.real)


def _pole_frequency(cfg: LoopConfig, bias: float) -> float | None:
    t = cfg.tank
    if t is None or t.r_l != 0.0:
        return None
    return 1.0 / (TWO_PI * math.sqrt(t.l * t.c_p(bias)))


def _brackets(f, g, f_pole):
    """Yield (i, falling) for every grid interval holding a 2*pi-multiple crossing.

    The phase is unwrapped along runs of connected samples; runs are cut at
    non-finite samples and at the interval containing the tank pole.
    """
    finite = np.isfinite(g)
    if not np.any(finite):
        return
    if np.all(np.abs(np.angle(g[finite])) <= 1e-12):
        raise DegeneratePhaseError("loop phase is identically zero over the scanned band")
    linked = finite[:-1] & finite[1:]
    if f_pole is not None:
        linked &= ~((f[:-1] <= f_pole) & (f[1:] >= f_pole))
    i = 0
    n = len(f)
    while i < n - 1:
        if not linked[i]:
            i += 1
            continue
        j = i
        while j < n - 1 and linked[j]:
            j += 1
        run = np.arange(i, j + 1)
        ph = np.unwrap(np.angle(g[run]))
        k = np.floor(ph / TWO_PI)
        for m in np.flatnonzero(k[:-1] != k[1:]):
            if abs(k[m] - k[m + 1]) != 1:
                continue  # several turns within one step: not resolvable
            level = TWO_PI * max(k[m], k[m + 1])
            if abs(ph[m] - level) >= math.pi or abs(ph[m + 1] - level) >= math.pi:
                continue
            yield int(run[m]), bool(ph[m + 1] < ph[m])
        i = j


def _refine(cfg, bias, a, b):
    fa = _scalar_phase(cfg, bias, a)
    fb = _scalar_phase(cfg, bias, b)
    if fa == 0.0:
        root = a
    elif fb == 0.0:
        root = b
    elif not fa * fb < 0.0:  # same sign or NaN
        return None
    else:
        root = brentq(lambda x: _scalar_phase(cfg, bias, x), a, b, xtol=ROOT_XTOL)
    g0 = _loop_array(cfg, bias, np.array([root - SLOPE_STEP, root, root + SLOPE_STEP]))
    if not np.all(np.isfinite(g0)):
        return None
    if abs(np.angle(g0[1])) > ROOT_PHASE_ATOL:
        return None
    slope = float(np.angle(g0[2] / g0[0])) / (2.0 * SLOPE_STEP)
    return PhaseZero(f=float(root), gain=float(abs(g0[1])), phase_slope=slope)


def _zeros(cfg, bias, f_lo, f_hi, grid_step, prefilter):
    _check_bias(cfg, bias)
    f = _grid(cfg, f_lo, f_hi, grid_step)
    g = _loop_array(cfg, bias, f)
    out: list[PhaseZero] = []
    for i, falling in _brackets(f, g, _pole_frequency(cfg, bias)):
        if prefilter and (not falling or max(abs(g[i]), abs(g[i + 1])) < PREFILTER_GAIN):
            continue
        z = _refine(cfg, bias, float(f[i]), float(f[i + 1]))
        if z is None:
            continue
        if out and abs(z.f - out[-1].f) < 10.0 * ROOT_XTOL:
            continue
        out.append(z)
    return out


def find_phase_zeros(cfg: LoopConfig, bias: float, f_lo: float, f_hi: float,
                     grid_step: float | None = None) -> list[PhaseZero]:
    """All isolated crossings of arg(G) through 0 mod 2*pi in [f_lo, f_hi].

    Args:
        grid_step: scan spacing in Hz; defaults to the largest admissible
            value (8 samples per narrowest in-band 3 dB bandwidth).

    Raises:
        GridTooCoarseError: ``grid_step`` exceeds the admissible value.
        DegeneratePhaseError: the phase is zero everywhere on the grid.
    """
    return _zeros(cfg, bias, f_lo, f_hi, grid_step, prefilter=False)


def _select(cfg: LoopConfig, bias: float, zeros: Sequence[PhaseZero]) -> OscillationSolution | None:
    cands = [z for z in zeros if z.gain >= 1.0 and z.phase_slope < 0.0]
    if not cands:
        return None
    best = max(cands, key=lambda z: z.gain)
    mode = cfg.resonator.nearest_branch(best.f) + 1 if cfg.resonator and cfg.resonator.branches else 0
    return OscillationSolution(
        f_osc=best.f,
        mode_index=mode,
        bias=float(bias),
        gain_margin_db=20.0 * math.log10(best.gain),
        phase_slope=best.phase_slope,
    )


def predict_oscillation(cfg: LoopConfig, bias: float, f_lo: float | None = None,
                        f_hi: float | None = None,
                        grid_step: float | None = None) -> OscillationSolution | None:
    """Oscillating mode at ``bias``: the falling phase zero with the largest |G| >= 1."""
    if f_lo is None or f_hi is None:
        lo, hi = cfg.default_window()
        f_lo = lo if f_lo is None else f_lo
        f_hi = hi if f_hi is None else f_hi
    zeros = _zeros(cfg, bias, f_lo, f_hi, grid_step, prefilter=True)
    return _select(cfg, bias, zeros)


def tuning_sweep(cfg: LoopConfig, bias_grid: Sequence[float], f_lo: float | None = None,
                 f_hi: float | None = None, grid_step: float | None = None) -> list[TuningPoint]:
    """Predict the oscillation at each bias and flag mode hops.

    A hop is flagged on a point whose f_osc differs from the previous reported
    f_osc by more than half the overtone spacing around the previous mode.
    """
    grid = np.asarray(bias_grid, dtype=float).ravel()
    if grid.size < 2:
        raise DomainError("bias grid needs at least 2 points", field="bias_grid")
    if np.any(np.diff(grid) <= 0.0):
        raise DomainError("bias grid must be strictly ascending", field="bias_grid")
    for b in (grid[0], grid[-1]):
        _check_bias(cfg, b)
    out: list[TuningPoint] = []
    prev: OscillationSolution | None = None
    for b in grid:
        sol = predict_oscillation(cfg, float(b), f_lo, f_hi, grid_step)
        hop = False
        if sol is not None and prev is not None and cfg.resonator is not None:
            spacing = cfg.resonator.local_spacing(prev.mode_index - 1)
            hop = abs(sol.f_osc - prev.f_osc) > 0.5 * spacing
        out.append(TuningPoint(float(b), sol, hop))
        if sol is not None:
            prev = sol
    return out


def unwrap_segments(phase: np.ndarray) -> np.ndarray:
    """np.unwrap applied separately to each run of finite values."""
    out = np.array(phase, dtype=float)
    finite = np.isfinite(out)
    idx = np.flatnonzero(finite)
    if idx.size:
        for run in np.split(idx, np.flatnonzero(np.diff(idx) != 1) + 1):
            out[run] = np.unwrap(out[run])
    return out


def loop_response_export(cfg: LoopConfig, bias: float, f_grid) -> list[tuple[float, float, float]]:
    """Rows of (f, 20*log10|G|, unwrapped phase in degrees); NaN at tank poles."""
    _check_bias(cfg, bias)
    f = _check_grid(f_grid)
    g = _loop_array(cfg, bias, f)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain_db = 20.0 * np.log10(np.abs(g))
    phase = np.degrees(unwrap_segments(np.angle(g)))
    return [(float(a), float(b), float(c)) for a, b, c in zip(f, gain_db, phase)]
