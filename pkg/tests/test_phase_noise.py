import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from vcmo.errors import DomainError
from vcmo.phase_noise import (
    LeesonParams,
    calibrate_leeson,
    fom_vcmo,
    leeson,
    local_slope,
    loaded_q,
    noise_floor,
    phase_noise_profile,
)
from vcmo.resonator import branch_from_spec

K_B = 1.380649e-23
TONE1 = branch_from_spec(305e6, 1650, 122)
TONE6 = branch_from_spec(415e6, 1970, 130)
Q_L = loaded_q(TONE1, 122.0)
CAL = calibrate_leeson(-100.0, 1e3, 300e6, Q_L)


def leeson_reference(nf_db, p_sig, q_l, f_fl, f_c, df):
    f = 10 ** (nf_db / 10)
    return 10 * math.log10(2 * f * K_B * 290 / p_sig * (1 + (f_c / (2 * q_l * df)) ** 2) * (1 + f_fl / df))


class TestLoadedQ:
    def test_unloaded(self):
        assert loaded_q(TONE1, 0.0) == 1650

    def test_equal_loading_halves(self):
        assert loaded_q(TONE1, 122.0) == pytest.approx(825.0)

    def test_tone6_triple_load(self):
        assert loaded_q(TONE6, 390.0) == pytest.approx(492.5)

    def test_negative_load(self):
        with pytest.raises(DomainError):
            loaded_q(TONE1, -1.0)


class TestLeeson:
    def test_matches_reference_formula(self):
        p = LeesonParams(4.5, 2e-4, 700.0, 3e3)
        for df in (10.0, 1e3, 1e5, 1e7):
            assert_allclose(leeson(p, 4e8, df), leeson_reference(4.5, 2e-4, 700.0, 3e3, 4e8, df), rtol=1e-12)

    def test_floor_asymptote(self):
        p = LeesonParams(3.0, 1e-3, 800.0, 1e3)
        assert leeson(p, 300e6, 1e10) == pytest.approx(noise_floor(p), abs=1e-3)
        f = 10 ** 0.3
        assert noise_floor(p) == pytest.approx(10 * math.log10(2 * f * K_B * 290 / 1e-3), abs=1e-12)

    def test_halving_offset_in_leeson_band(self):
        p = LeesonParams(3.0, 1e-3, 800.0, 0.0)
        assert leeson(p, 300e6, 1e3) - leeson(p, 300e6, 2e3) == pytest.approx(6.02, abs=0.1)

    def test_flicker_region_slope(self):
        p = LeesonParams(3.0, 1e-3, 800.0, 1e4)
        assert local_slope(p, 300e6, 10.0, 100.0) == pytest.approx(-30.0, abs=1.0)

    @pytest.mark.parametrize("offset", [0.0, -5.0])
    def test_bad_offset(self, offset):
        with pytest.raises(DomainError):
            leeson(CAL, 300e6, offset)

    @pytest.mark.parametrize("kw", [{"p_sig": 0.0}, {"q_loaded": -1.0}, {"f_flicker": -1.0}])
    def test_param_invariants(self, kw):
        args = {"noise_factor_db": 3.0, "p_sig": 1e-3, "q_loaded": 800.0, "f_flicker": 0.0, **kw}
        with pytest.raises(DomainError):
            LeesonParams(**args)

    def test_three_asymptotic_slopes(self):
        corner = CAL.leeson_corner(300e6)
        assert CAL.f_flicker < corner
        mid = math.sqrt(CAL.f_flicker * corner)
        assert local_slope(CAL, 300e6, 10.0, 100.0) == pytest.approx(-30.0, abs=1.0)
        assert local_slope(CAL, 300e6, mid / math.sqrt(10), mid * math.sqrt(10)) == pytest.approx(-20.0, abs=1.0)
        assert local_slope(CAL, 300e6, 1e7, 1e8) == pytest.approx(0.0, abs=1.0)


class TestFom:
    def test_text_anchor_1khz(self):
        assert fom_vcmo(-100.0, 300e6, 1e3, 9e-3) == pytest.approx(200.0, abs=0.05)

    def test_text_anchor_floor(self):
        assert fom_vcmo(-153.0, 300e6, 1e6, 9e-3) == pytest.approx(193.0, abs=0.05)

    def test_all_terms_vanish(self):
        assert fom_vcmo(0.0, 1e6, 1e6, 1e-3) == 0.0

    def test_tabulated_pair_is_inconsistent(self):
        # -94 dBc/Hz under the same carrier, offset and power gives 194, not 187.
        assert fom_vcmo(-94.0, 300e6, 1e3, 9e-3) == pytest.approx(194.0, abs=0.05)

    @pytest.mark.parametrize("args", [(-100, 0.0, 1e3, 1e-3), (-100, 3e8, -1.0, 1e-3),
                                      (-100, 3e8, 1e3, 0.0), (math.nan, 3e8, 1e3, 1e-3)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            fom_vcmo(*args)

    @given(st.floats(-200, 0), st.floats(-50, 50), st.floats(1e-6, 1.0))
    def test_linearity(self, l, x, p_dc):
        base = fom_vcmo(l, 3e8, 1e3, p_dc)
        assert fom_vcmo(l - x, 3e8, 1e3, p_dc) == pytest.approx(base + x, abs=1e-9)
        assert fom_vcmo(l, 3e8, 1e3, 10 * p_dc) == pytest.approx(base - 10, abs=1e-9)


class TestProfile:
    def test_singleton(self):
        (pt,) = phase_noise_profile(CAL, 300e6, [1e3])
        assert pt.offset == 1e3 and pt.value == leeson(CAL, 300e6, 1e3)

    def test_calibration_hits_anchor(self):
        assert leeson(CAL, 300e6, 1e3) == pytest.approx(-100.0, abs=1e-9)
        assert CAL.noise_factor_db == 3.0 and CAL.f_flicker == 1e3 and CAL.q_loaded == Q_L

    def test_far_offset_near_floor(self):
        assert abs(leeson(CAL, 300e6, 1e6) - noise_floor(CAL)) < 3.0

    def test_doubling_power(self):
        grid = np.logspace(1, 8, 57)
        a = phase_noise_profile(CAL, 300e6, grid)
        hi = LeesonParams(CAL.noise_factor_db, 2 * CAL.p_sig, CAL.q_loaded, CAL.f_flicker)
        b = phase_noise_profile(hi, 300e6, grid)
        assert_allclose([y.value - x.value for x, y in zip(a, b)], -10 * math.log10(2), atol=1e-9)

    @pytest.mark.parametrize("grid", [[], [1e3, 1e2], [0.0, 1.0], [1e3, 1e3]])
    def test_bad_grid(self, grid):
        with pytest.raises(DomainError):
            phase_noise_profile(CAL, 300e6, grid)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 10), st.floats(1e-6, 1.0), st.floats(10, 1e5), st.floats(0, 1e6),
           st.floats(1e6, 1e10))
    def test_monotone(self, nf, p, q, ff, fc):
        pts = phase_noise_profile(LeesonParams(nf, p, q, ff), fc, np.logspace(0, 9, 200))
        v = np.array([x.value for x in pts])
        assert np.all(np.isfinite(v))
        assert np.all(np.diff(v) <= 1e-12)
