"""Extraction of multi-branch MBVD models from measured admittance.

Pipeline: :func:`detect_peaks` -> :func:`initial_guess` -> :func:`refine_fit`.
The refinement is a Levenberg-Marquardt loop on the relative complex residual
``(Y_model - Y)/|Y|`` with all parameters in log space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from .errors import DomainError, FitError
from .resonator import (
    TWO_PI,
    MbvdResonator,
    branch_from_spec,
    resonator_admittance,
)

log = logging.getLogger(__name__)

MIN_POINTS = 16
DEFAULT_PROMINENCE_DB = 6.0
EXCLUSION_BANDWIDTHS = 5.0
MIN_POINTS_PER_BANDWIDTH = 5
# Residual this small is treated as an exact fit.
RMS_FLOOR = 1e-12
# A branch whose peak conductance is this far below the rest contributes
# nothing measurable; its parameters are unidentifiable.
DEGENERATE_CONDUCTANCE_RATIO = 1e-6


@dataclass(frozen=True)
class AdmittanceDataset:
    """Measured (f, Y) pairs, strictly ascending in f, at least 16 points."""

    f: np.ndarray
    y: np.ndarray
    source: str = ""

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).ravel()
        y = np.asarray(self.y, dtype=complex).ravel()
        if f.shape != y.shape:
            raise DomainError("frequency and admittance arrays differ in length", field="points")
        if f.size < MIN_POINTS:
            raise DomainError(
                f"admittance dataset needs at least {MIN_POINTS} points, got {f.size}",
                field="points",
            )
        if not np.all(np.isfinite(f)) or np.any(f <= 0.0):
            raise DomainError("frequencies must be positive and finite", field="points")
        if np.any(np.diff(f) <= 0.0):
            raise DomainError("frequencies must be strictly ascending", field="points")
        if not np.all(np.isfinite(y)):
            raise DomainError("admittance values must be finite", field="points")
        f.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, complex]], source: str = ""):
        pts = list(points)
        return cls(np.array([p[0] for p in pts], dtype=float),
                   np.array([p[1] for p in pts], dtype=complex), source)

    @property
    def points(self) -> list[tuple[float, complex]]:
        return [(float(a), complex(b)) for a, b in zip(self.f, self.y)]

    def __len__(self):
        return self.f.size


@dataclass(frozen=True)
class FitResult:
    model: MbvdResonator
    residual_rms: float
    iterations: int
    converged: bool
    warnings: tuple[str, ...] = ()
    history: tuple[float, ...] = field(default=(), repr=False)


class PeakList(list):
    """Ascending list of peak frequencies with any sampling warnings attached."""

    def __init__(self, freqs=(), warnings=()):
        super().__init__(freqs)
        self.warnings = list(warnings)


def synthesize(r: MbvdResonator, f, noise: float = 0.0, seed: int | None = 0,
               source: str = "synthetic") -> AdmittanceDataset:
    """Model admittance, optionally with multiplicative complex Gaussian noise.

    Each point is scaled by ``1 + noise*(n_re + j*n_im)/sqrt(2)`` with standard
    normal n_re, n_im drawn from ``numpy.random.default_rng(seed)``.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(resonator_admittance(r, f), dtype=complex)
    if noise:
        rng = np.random.default_rng(seed)
        n = rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)
        y = y * (1.0 + noise * n / math.sqrt(2.0))
    return AdmittanceDataset(f, y, source)


def _half_power_width(f, mag, i, floor_idx=None):
    """Width between the -3 dB points of ``mag`` around index ``i`` (linear interp).

    Returns (width, n_points_inside) or (nan, n) if a side never drops 3 dB.
    """
    level = mag[i] / math.sqrt(2.0)
    lo_lim, hi_lim = (0, len(f) - 1) if floor_idx is None else floor_idx
    j = i
    while j > lo_lim and mag[j] > level:
        j -= 1
    k = i
    while k < hi_lim and mag[k] > level:
        k += 1
    if mag[j] > level or mag[k] > level:
        return math.nan, k - j - 1
    # interpolate crossings
    fl = f[j] + (level - mag[j]) * (f[j + 1] - f[j]) / (mag[j + 1] - mag[j])
    fh = f[k - 1] + (level - mag[k - 1]) * (f[k] - f[k - 1]) / (mag[k] - mag[k - 1])
    return fh - fl, k - j - 1


def detect_peaks(d: AdmittanceDataset, prominence_db: float = DEFAULT_PROMINENCE_DB) -> PeakList:
    """Local maxima of |Y| standing out by at least ``prominence_db``.

    Each peak is refined by a parabola through the three samples around it on
    log|Y|. Peaks sampled with fewer than 5 points inside their half-power
    width add a warning to the returned list.
    """
    prominence_db = float(prominence_db)
    if not prominence_db > 0.0:
        raise DomainError("prominence_db must be positive", field="prominence_db")
    mag = np.abs(d.y)
    if np.any(mag <= 0.0):
        raise DomainError("admittance magnitude must be non-zero", field="points")
    db = 20.0 * np.log10(mag)
    idx, _ = find_peaks(db, prominence=prominence_db)
    freqs, notes = [], []
    for i in idx:
        y0, y1, y2 = db[i - 1], db[i], db[i + 1]
        denom = y0 - 2.0 * y1 + y2
        delta = 0.5 * (y0 - y2) / denom if denom != 0.0 else 0.0
        delta = min(max(delta, -0.5), 0.5)
        if delta >= 0:
            fp = d.f[i] + delta * (d.f[i + 1] - d.f[i])
        else:
            fp = d.f[i] + delta * (d.f[i] - d.f[i - 1])
        freqs.append(float(fp))
        _, inside = _half_power_width(d.f, mag, i)
        if inside < MIN_POINTS_PER_BANDWIDTH:
            notes.append(
                f"peak near {fp:.6g} Hz sampled by {inside} point(s) inside its "
                f"half-power width (< {MIN_POINTS_PER_BANDWIDTH})"
            )
    for n in notes:
        log.warning(n)
    return PeakList(freqs, notes)


def initial_guess(d: AdmittanceDataset, peaks: Sequence[float], label: str = "fit") -> MbvdResonator:
    """Rough MBVD parameters from a dataset and its detected peaks.

    c_0 is the least-squares slope of Im(Y) against omega over points more than
    five bandwidths from every peak. Each branch takes r_m = 1/|Y_m(f_m)| and
    q = f_m/bw from the half-power width of Y_m = Y - j*omega*c_0.
    """
    peaks = sorted(float(p) for p in peaks)
    if not peaks:
        raise DomainError("need at least one peak", field="peaks")
    f, y = d.f, d.y
    if peaks[0] < f[0] or peaks[-1] > f[-1]:
        raise DomainError("peaks must lie within the dataset span", field="peaks")
    w = TWO_PI * f
    mag = np.abs(y)
    idx = [int(np.argmin(np.abs(f - p))) for p in peaks]
    # Raw bandwidths only set the exclusion radius, so a crude estimate will do.
    raw_bw = []
    for i in idx:
        bw, _ = _half_power_width(f, mag, i)
        if not math.isfinite(bw) or bw <= 0.0:
            bw = 10.0 * max(f[min(i + 1, len(f) - 1)] - f[max(i - 1, 0)], 1.0)
        raw_bw.append(bw)
    keep = np.ones(f.size, dtype=bool)
    for p, bw in zip(peaks, raw_bw):
        keep &= np.abs(f - p) > EXCLUSION_BANDWIDTHS * bw
    if np.count_nonzero(keep) < 2:
        raise FitError(
            "no off-resonance points to estimate c_0; measure over a wider span "
            "(points farther than 5 bandwidths from every peak are needed)"
        )
    c_0 = float(np.dot(w[keep], y[keep].imag) / np.dot(w[keep], w[keep]))
    if not c_0 > 0.0:
        raise FitError(f"estimated c_0 is not positive ({c_0!r}); data may not be admittance")
    ym = y - 1j * w * c_0
    mm = np.abs(ym)
    branches = []
    bounds = [0] + [(a + b) // 2 for a, b in zip(idx, idx[1:])] + [f.size - 1]
    for n, i in enumerate(idx):
        lo, hi = bounds[n], bounds[n + 1]
        half = max(2, int(round(raw_bw[n] / max(f[1] - f[0], 1e-300))))
        a, b = max(lo, i - half), min(hi, i + half)
        j = a + int(np.argmax(mm[a:b + 1]))
        f_m = float(f[j])
        if 0 < j < f.size - 1:
            l0, l1, l2 = np.log(mm[j - 1:j + 2])
            den = l0 - 2.0 * l1 + l2
            if den < 0.0:
                delta = min(max(0.5 * (l0 - l2) / den, -0.5), 0.5)
                step = f[j + 1] - f[j] if delta >= 0 else f[j] - f[j - 1]
                f_m = float(f[j] + delta * step)
        r_m = 1.0 / float(mm[j])
        bw, _ = _half_power_width(f, mm, j, (lo, hi))
        if not math.isfinite(bw) or bw <= 0.0:
            bw = raw_bw[n]
        branches.append(branch_from_spec(f_m, f_m / bw, r_m))
    return MbvdResonator(c_0, tuple(branches), label)


# --- Levenberg-Marquardt refinement -------------------------------------------------


def _pack(r: MbvdResonator) -> np.ndarray:
    vals = [r.c_0]
    for b in r.branches:
        vals += [b.f_m, b.q, b.r_m]
    return np.log(np.array(vals))


def _unpack(x: np.ndarray, label: str) -> MbvdResonator:
    v = np.exp(x)
    branches = tuple(branch_from_spec(*v[1 + 3 * k:4 + 3 * k]) for k in range((len(v) - 1) // 3))
    return MbvdResonator(float(v[0]), branches, label)


def _model_and_jacobian(x: np.ndarray, f: np.ndarray):
    """Model Y and dY/dx for log-parameters x = [ln c0, (ln f_m, ln q, ln r)*]."""
    w = TWO_PI * f
    v = np.exp(x)
    nb = (len(v) - 1) // 3
    jac = np.empty((f.size, len(v)), dtype=complex)
    jc0 = 1j * w * v[0]
    y = jc0.copy()
    jac[:, 0] = jc0
    for k in range(nb):
        f_m, q, r = v[1 + 3 * k:4 + 3 * k]
        ratio = f / f_m
        u = ratio - 1.0 / ratio
        yb = 1.0 / (r * (1.0 + 1j * q * u))
        y += yb
        yb2r = yb * yb * r
        jac[:, 1 + 3 * k] = yb2r * 1j * q * (ratio + 1.0 / ratio)  # d/dln f_m
        jac[:, 2 + 3 * k] = -yb2r * 1j * q * u  # d/dln q
        jac[:, 3 + 3 * k] = -yb  # d/dln r
    return y, jac


def _residual(x, f, y, wts):
    model, jac = _model_and_jacobian(x, f)
    res = (model - y) * wts
    return res, jac * wts[:, None]


def _rms(res) -> float:
    return float(np.sqrt(np.mean(np.abs(res) ** 2)))


def refine_fit(d: AdmittanceDataset, init: MbvdResonator, max_iter: int = 200,
               tol: float = 1e-9) -> FitResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) refinement of ``init``.

    Minimises sum |Y_model - Y|^2/|Y|^2 over c_0 and every (f_m, q, r_m).
    Damping grows x10 on a rejected step and shrinks x0.5 on an accepted one.
    Steps producing an invalid resonator (unsorted or too-close branches) are
    rejected. Convergence: relative change of the RMS residual below ``tol``
    after an accepted step, or an RMS residual at numerical noise level.

    Raises:
        FitError: the residual at ``init`` is not finite.
    """
    if int(max_iter) < 1:
        raise DomainError("max_iter must be >= 1", field="max_iter")
    tol = float(tol)
    if not tol > 0.0:
        raise DomainError("tol must be positive", field="tol")
    label = init.label or "fit"
    f, y = d.f, d.y
    x = _pack(init)
    with np.errstate(over="ignore", invalid="ignore"):
        wts = 1.0 / np.abs(y)
        res, jac = _residual(x, f, y, wts)
        rms = _rms(res)
    if not math.isfinite(rms):
        raise FitError("non-finite residual at initial model; check data and initial guess")
    history = [rms]
    lam = 1e-3
    converged = rms <= RMS_FLOOR
    it = 0
    while not converged and it < max_iter:
        it += 1
        jr = np.vstack([jac.real, jac.imag])
        rr = np.concatenate([res.real, res.imag])
        jtj = jr.T @ jr
        g = jr.T @ rr
        diag = np.diag(jtj).copy()
        diag[diag == 0.0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + step
            try:
                _unpack(x_new, label)
            except DomainError:
                lam *= 10.0
                continue
            res_new, jac_new = _residual(x_new, f, y, wts)
            rms_new = _rms(res_new)
            if math.isfinite(rms_new) and rms_new < rms:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # No descent direction left at any damping: a local minimum.
            converged = True
            break
        change = (rms - rms_new) / rms
        x, res, jac, rms = x_new, res_new, jac_new, rms_new
        history.append(rms)
        lam = max(lam * 0.5, 1e-12)
        if change < tol or rms <= RMS_FLOOR:
            converged = True
    model = _unpack(x, label)
    notes = []
    peak_g = np.array([1.0 / b.r_m for b in model.branches])
    if peak_g.size:
        weak = np.flatnonzero(peak_g < DEGENERATE_CONDUCTANCE_RATIO * peak_g.max())
        for k in weak:
            notes.append(f"branch {k + 1} at {model.branches[k].f_m:.6g} Hz is degenerate "
                         f"(c_m = {model.branches[k].c_m:.3g} F); parameters unidentifiable")
        if weak.size:
            converged = False
    for n in notes:
        log.warning(n)
    return FitResult(model, rms, it, converged, tuple(notes), tuple(history))


def fit_dataset(d: AdmittanceDataset, prominence_db: float = DEFAULT_PROMINENCE_DB,
                max_iter: int = 200, tol: float = 1e-9, label: str = "fit") -> FitResult:
    """Convenience wrapper running the whole detect -> guess -> refine pipeline."""
    peaks = detect_peaks(d, prominence_db)
    if not peaks:
        raise FitError("no resonance peaks detected; lower the prominence threshold")
    init = initial_guess(d, peaks, label)
    result = refine_fit(d, init, max_iter, tol)
    if peaks.warnings:
        result = FitResult(result.model, result.residual_rms, result.iterations,
                           result.converged, tuple(peaks.warnings) + result.warnings,
                           result.history)
    return result
