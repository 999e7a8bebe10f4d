import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from vcmo.errors import DomainError, FitError
from vcmo.fitting import (
    AdmittanceDataset,
    detect_peaks,
    fit_dataset,
    initial_guess,
    refine_fit,
    synthesize,
)
from vcmo.resonator import LOBAR_TONES, MbvdResonator, branch_from_spec, lobar_table1, resonator_admittance

TONE1 = branch_from_spec(305e6, 1650, 122)
GRID = np.arange(295e6, 515e6 + 1, 10e3)


def abs_y_maximum(c_0, b):
    """Frequency of the |Y| maximum of c_0 || one branch, from the closed form.

    With x = q*u and beta = w*c_0*r_m, |Y|^2 r_m^2 = (1 + (beta*(1 + x^2) - x)^2)/(1 + x^2)^2
    is stationary near resonance at x* = (1 - sqrt(1 + 4 beta^2))/(2 beta).
    """
    beta = 2 * math.pi * b.f_m * c_0 * b.r_m
    x = (1 - math.sqrt(1 + 4 * beta**2)) / (2 * beta)
    u = x / b.q
    return b.f_m * (u + math.sqrt(u * u + 4)) / 2


@pytest.fixture(scope="module")
def preset_clean():
    return synthesize(lobar_table1(), GRID)


@pytest.fixture(scope="module")
def preset_noisy():
    return synthesize(lobar_table1(), GRID, noise=0.01, seed=2024)


class TestDataset:
    def test_too_few_points(self):
        with pytest.raises(DomainError, match="at least 16"):
            AdmittanceDataset.from_points([(1e6, 1j), (2e6, 1j), (3e6, 1j)])

    @pytest.mark.parametrize("f", [np.r_[np.arange(1, 16), 15.0], np.r_[np.arange(1, 17)][::-1],
                                   np.r_[0.0, np.arange(1, 16)]])
    def test_bad_frequencies(self, f):
        with pytest.raises(DomainError):
            AdmittanceDataset(f * 1e6, np.ones(16, complex))

    def test_points_round_trip(self):
        d = synthesize(lobar_table1(), GRID[:20])
        assert AdmittanceDataset.from_points(d.points).points == d.points

    def test_noise_is_seeded(self):
        a = synthesize(lobar_table1(), GRID[:50], noise=0.01, seed=7)
        b = synthesize(lobar_table1(), GRID[:50], noise=0.01, seed=7)
        c = synthesize(lobar_table1(), GRID[:50], noise=0.01, seed=8)
        assert np.array_equal(a.y, b.y) and not np.array_equal(a.y, c.y)
        rel = np.abs(a.y / resonator_admittance(lobar_table1(), GRID[:50]) - 1)
        assert 0.002 < np.sqrt(np.mean(rel**2)) < 0.02


class TestDetectPeaks:
    def test_single_tone(self):
        r = MbvdResonator(2e-12, (TONE1,))
        f = np.arange(300e6, 310e6, 2e3)
        (p,) = detect_peaks(synthesize(r, f))
        # The |Y| maximum of a branch shunted by c_0 sits below f_m.
        assert abs(p - abs_y_maximum(2e-12, TONE1)) <= 2e3
        assert abs(p - 305e6) <= TONE1.bandwidth

    def test_static_capacitor_only(self):
        d = synthesize(MbvdResonator(2e-12), np.linspace(1e8, 1e9, 200))
        for prom in (0.1, 6.0, 40.0):
            assert detect_peaks(d, prom) == []

    def test_full_preset(self, preset_clean):
        r = lobar_table1()
        peaks = detect_peaks(preset_clean, 6.0)
        assert len(peaks) == 10
        assert peaks == sorted(peaks)
        for p, b in zip(peaks, r.branches):
            assert abs(p - abs_y_maximum(r.c_0, b)) <= 10e3
            assert abs(p - b.f_m) <= b.bandwidth

    def test_sparse_sampling_warns(self):
        r = MbvdResonator(2e-12, (TONE1,))
        peaks = detect_peaks(synthesize(r, np.arange(250e6, 350e6, 100e3)), 3.0)
        assert len(peaks) == 1 and peaks.warnings

    def test_bad_prominence(self, preset_clean):
        with pytest.raises(DomainError):
            detect_peaks(preset_clean, 0.0)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(1e-3, 1e3))
    def test_scale_invariance(self, k):
        d = synthesize(lobar_table1(), GRID[::2])
        scaled = AdmittanceDataset(d.f, d.y * k)
        assert_allclose(detect_peaks(scaled), detect_peaks(d), rtol=0, atol=1e-3)


class TestInitialGuess:
    def test_single_tone(self):
        r = MbvdResonator(2e-12, (TONE1,))
        d = synthesize(r, np.arange(295e6, 315e6, 2e3))
        g = initial_guess(d, detect_peaks(d))
        assert g.c_0 == pytest.approx(2e-12, rel=0.03)
        (b,) = g.branches
        assert b.r_m == pytest.approx(122, rel=0.03)
        assert b.q == pytest.approx(1650, rel=0.10)

    def test_scaling(self):
        r = MbvdResonator(2e-12, (TONE1,))
        d = synthesize(r, np.arange(295e6, 315e6, 2e3))
        a = initial_guess(d, detect_peaks(d))
        b = initial_guess(AdmittanceDataset(d.f, 2 * d.y), detect_peaks(d))
        assert b.c_0 == pytest.approx(2 * a.c_0, rel=1e-12)
        assert b.branches[0].r_m == pytest.approx(a.branches[0].r_m / 2, rel=1e-12)
        assert b.branches[0].q == pytest.approx(a.branches[0].q, rel=1e-12)

    def test_full_preset_resistances(self, preset_clean):
        g = initial_guess(preset_clean, detect_peaks(preset_clean))
        for b, (_, _, r_m) in zip(g.branches, LOBAR_TONES):
            assert b.r_m == pytest.approx(r_m, rel=0.10)

    def test_needs_off_resonance_points(self):
        r = MbvdResonator(2e-12, (TONE1,))
        d = synthesize(r, np.linspace(304.9e6, 305.1e6, 40))
        with pytest.raises(FitError, match="wider span"):
            initial_guess(d, [305e6])

    @pytest.mark.parametrize("peaks", [[], [100e6]])
    def test_bad_peaks(self, preset_clean, peaks):
        with pytest.raises(DomainError):
            initial_guess(preset_clean, peaks)


class TestRefine:
    def test_ground_truth_is_fixed_point(self, preset_clean):
        res = refine_fit(preset_clean, lobar_table1())
        assert res.iterations == 0 and res.converged
        assert res.residual_rms < 1e-10

    def test_noisy_round_trip(self, preset_noisy):
        res = fit_dataset(preset_noisy)
        assert res.converged
        for b, (f_m, q, r_m) in zip(res.model.branches, LOBAR_TONES):
            assert abs(b.f_m / f_m - 1) < 1e-4
            assert abs(b.q / q - 1) < 0.05
            assert abs(b.r_m / r_m - 1) < 0.03

    def test_noiseless_resynthesis(self, preset_clean):
        res = fit_dataset(preset_clean)
        again = np.abs(resonator_admittance(res.model, GRID))
        assert np.max(np.abs(again / np.abs(preset_clean.y) - 1)) < 1e-3

    def test_monotone_acceptance(self, preset_noisy):
        res = refine_fit(preset_noisy, initial_guess(preset_noisy, detect_peaks(preset_noisy)))
        h = np.array(res.history)
        assert np.all(np.diff(h) < 0) and res.residual_rms == h[-1] >= 0

    def test_iteration_cap(self, preset_noisy):
        init = initial_guess(preset_noisy, detect_peaks(preset_noisy))
        res = refine_fit(preset_noisy, init, max_iter=1)
        assert res.iterations == 1 and not res.converged

    def test_spurious_branch_flagged(self):
        r = MbvdResonator(2e-12, (TONE1,))
        d = synthesize(r, np.arange(280e6, 340e6, 5e3))
        init = MbvdResonator(2e-12, (TONE1, branch_from_spec(330e6, 2000, 150)))
        res = refine_fit(d, init)
        spur = res.model.branches[1]
        assert spur.c_m < 1e-20 or not res.converged
        # Here the branch is driven to zero conductance and the flag fires.
        assert spur.c_m < 1e-20 and not res.converged
        assert any("degenerate" in w and "branch 2" in w for w in res.warnings)

    def test_non_finite_start(self, preset_clean):
        bad = AdmittanceDataset(preset_clean.f, np.where(np.arange(len(GRID)) == 5, 1e-320, preset_clean.y))
        with pytest.raises(FitError):
            refine_fit(bad, lobar_table1())

    @pytest.mark.parametrize("kw", [{"max_iter": 0}, {"tol": 0.0}])
    def test_arguments(self, preset_clean, kw):
        with pytest.raises(DomainError):
            refine_fit(preset_clean, lobar_table1(), **kw)

    def test_no_peaks(self):
        with pytest.raises(FitError):
            fit_dataset(synthesize(MbvdResonator(1e-12), np.linspace(1e8, 2e8, 64)))
