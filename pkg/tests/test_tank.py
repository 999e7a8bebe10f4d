import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from oracles import tank_abcd_nodal, tank_transfer_nodal
from vcmo.errors import BiasRangeError, DomainError, TankPoleError
from vcmo.tank import (
    FixedCapacitor,
    Region,
    TankConfig,
    TankResonances,
    VaractorModel,
    classify_region,
    ring_reactance,
    tank_abcd,
    tank_resonances,
    tank_transfer,
    varactor_capacitance,
)

VAR = VaractorModel()
REF_TANK = TankConfig(l=18e-9, c_s=7e-12, varactor=FixedCapacitor(4e-12))


class TestVaractor:
    def test_endpoints(self):
        assert_allclose(varactor_capacitance(VAR, 0.0), 22.62e-12, rtol=1e-12)
        assert_allclose(varactor_capacitance(VAR, 8.0), 1.3e-12, rtol=1e-12)

    def test_exponent_fixed_by_endpoints(self):
        m = math.log(22.62 / 1.3) / math.log(1 + 8 / 0.7)
        assert VAR.m == pytest.approx(m, rel=1e-14)
        assert VAR.m == pytest.approx(1.1335, abs=1e-4)

    def test_mid_bias(self):
        assert_allclose(varactor_capacitance(VAR, 2.0), 4.90e-12, rtol=5e-3)

    @pytest.mark.parametrize("bias", [-0.01, 8.01])
    def test_out_of_range(self, bias):
        with pytest.raises(BiasRangeError) as exc:
            varactor_capacitance(VAR, bias)
        assert exc.value.interval == (0.0, 8.0)

    def test_strictly_decreasing_on_mv_grid(self):
        v = np.linspace(0.0, 8.0, 8001)
        c = np.array([varactor_capacitance(VAR, x) for x in v])
        assert np.all(np.diff(c) < 0)

    def test_from_endpoints(self):
        v = VaractorModel.from_endpoints(10e-12, 2e-12, 1.0, 5.0, v_j=0.5)
        assert_allclose(v.capacitance(1.0), 10e-12, rtol=1e-12)
        assert_allclose(v.capacitance(5.0), 2e-12, rtol=1e-12)

    @pytest.mark.parametrize("kw", [{"c_j0": 0.0}, {"v_j": -1.0}, {"m": 0.0},
                                    {"v_min": 3.0, "v_max": 3.0}])
    def test_invalid_model(self, kw):
        with pytest.raises(DomainError):
            VaractorModel(**kw)


class TestAbcd:
    def test_identity_near_dc(self):
        assert_allclose(tank_abcd(TankConfig(), 3.0, 1.0), np.eye(2), atol=1e-6)

    def test_reciprocity(self):
        m = tank_abcd(REF_TANK, 0.0, 100e6)
        assert abs(np.linalg.det(m) - 1) < 1e-9

    def test_matches_nodal_oracle(self):
        m = tank_abcd(REF_TANK, 0.0, 500e6)
        assert_allclose(m, tank_abcd_nodal(18e-9, 7e-12, 4e-12, 500e6), rtol=1e-9)

    def test_lossy_inductor_matches_oracle(self):
        t = TankConfig(18e-9, 7e-12, FixedCapacitor(4e-12), r_l=2.5)
        for f in (150e6, 433e6, 593e6, 800e6):
            m = tank_abcd(t, 0.0, f)
            assert_allclose(m, tank_abcd_nodal(18e-9, 7e-12, 4e-12, f, r_l=2.5), rtol=1e-9)
            assert abs(np.linalg.det(m) - 1) < 1e-9

    def test_pole_is_flagged(self):
        f_p = 1 / (2 * math.pi * math.sqrt(18e-9 * 4e-12))
        with pytest.raises(TankPoleError):
            tank_abcd(REF_TANK, 0.0, f_p * (1 + 5e-7))
        tank_abcd(REF_TANK, 0.0, f_p * (1 + 2e-6))  # just outside the flagged band

    def test_nonpositive_frequency(self):
        with pytest.raises(DomainError):
            tank_abcd(REF_TANK, 0.0, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-9, 100e-9), st.floats(0.5e-12, 50e-12), st.floats(0.0, 8.0),
           st.floats(1e6, 3e9))
    def test_reciprocity_property(self, l, c_s, bias, f):
        t = TankConfig(l, c_s)
        try:
            m = tank_abcd(t, bias, f)
        except TankPoleError:
            return
        assert abs(np.linalg.det(m) - 1) < 1e-9 * max(1.0, abs(m[0, 0] * m[1, 1]))


class TestTransfer:
    def test_transparent_at_dc(self):
        assert_allclose(tank_transfer(TankConfig(), 4.0, 1.0, 0.0, 50.0), 1.0, atol=1e-6)

    def test_below_pole_matches_oracle(self):
        t = TankConfig()
        bias = 2.0
        res = tank_resonances(t, bias)
        f = res.f_p_t * (1 - 1e-3)
        g = tank_transfer(t, bias, f, 50.0, 50.0)
        ref = tank_transfer_nodal(t.l, t.c_s, t.c_p(bias), f, 50.0, 50.0)
        assert_allclose(abs(g), abs(ref), rtol=0.01)
        assert_allclose(g, ref, rtol=1e-9)

    def test_ideal_source_matches_oracle(self):
        g = tank_transfer(REF_TANK, 0.0, 300e6, 0.0, 75.0)
        assert_allclose(g, tank_transfer_nodal(18e-9, 7e-12, 4e-12, 300e6, 0.0, 75.0), rtol=1e-9)

    def test_phase_passes_through_inversion_at_series_resonance(self):
        # Around f_s_t the phase of -T falls through zero without an extremum;
        # resistive terminations pull the crossing a few percent off f_s_t.
        t = TankConfig()
        for bias in (0.0, 2.0, 8.0):
            res = tank_resonances(t, bias)
            f = np.linspace(0.97, 1.03, 301) * res.f_s_t
            f = f[f < res.f_p_t * (1 - 1e-5)]
            ph = np.unwrap(np.angle(-tank_transfer(t, bias, f, 150.0, 100.0)))
            assert np.all(np.diff(ph) < 0)
            zero = f[np.argmin(np.abs(ph))]
            assert abs(zero - res.f_s_t) < 0.05 * res.f_s_t

    def test_open_load_inverts_at_series_resonance(self):
        res = tank_resonances(REF_TANK, 0.0)
        g = tank_transfer(REF_TANK, 0.0, res.f_s_t, 0.0, 1e12)
        assert_allclose(g, -1.0, atol=1e-6)

    def test_array_input_with_pole_as_nan(self):
        res = tank_resonances(REF_TANK, 0.0)
        g = tank_transfer(REF_TANK, 0.0, np.array([400e6, res.f_p_t, 700e6]), 50.0, 50.0, pole="nan")
        assert np.isnan(g[1]) and np.isfinite(g[0]) and np.isfinite(g[2])

    def test_termination_checks(self):
        with pytest.raises(DomainError):
            tank_transfer(REF_TANK, 0.0, 1e8, -1.0, 50.0)
        with pytest.raises(DomainError):
            tank_transfer(REF_TANK, 0.0, 1e8, 0.0, 0.0)


class TestResonances:
    def test_reference_configuration(self):
        res = tank_resonances(REF_TANK, 0.0)
        assert_allclose(res.f_s_t, 433e6, rtol=1e-3)
        assert_allclose(res.f_p_t, 593e6, rtol=1e-3)
        assert_allclose(res.f_s_t, 1 / (2 * math.pi * math.sqrt(18e-9 * 7.5e-12)), rtol=1e-9)
        assert res.bw == pytest.approx(res.f_p_t - res.f_s_t)

    def test_numeric_sign_change(self):
        res = tank_resonances(REF_TANK, 0.0)
        assert ring_reactance(REF_TANK, 0.0, res.f_s_t * (1 - 1e-6)) < 0
        assert ring_reactance(REF_TANK, 0.0, res.f_s_t * (1 + 1e-6)) > 0

    def test_huge_shunt_capacitance(self):
        t = TankConfig(18e-9, 1e-6, FixedCapacitor(4e-12))
        res = tank_resonances(t, 0.0)
        assert res.f_s_t < 0.01 * res.f_p_t
        assert_allclose(res.bw, res.f_p_t, rtol=0.01)

    def test_halving_cp(self):
        a = tank_resonances(REF_TANK, 0.0)
        b = tank_resonances(TankConfig(18e-9, 7e-12, FixedCapacitor(2e-12)), 0.0)
        assert_allclose(b.f_p_t / a.f_p_t, math.sqrt(2), rtol=1e-12)
        assert 1 < b.f_s_t / a.f_s_t < math.sqrt(2)
        assert_allclose(b.f_s_t / a.f_s_t, math.sqrt(7.5 / 5.5), rtol=1e-9)

    def test_shunt_capacitance_leaves_pole(self):
        ref = tank_resonances(TankConfig(c_s=1e-12), 3.0).f_p_t
        for c_s in np.logspace(-13, -11, 9):
            assert abs(tank_resonances(TankConfig(c_s=c_s), 3.0).f_p_t - ref) < 1e-9 * ref

    def test_series_resonance_falls_with_shunt_capacitance(self):
        fs = [tank_resonances(TankConfig(c_s=c), 3.0).f_s_t for c in np.linspace(1e-12, 10e-12, 10)]
        assert np.all(np.diff(fs) < 0)

    def test_both_fall_with_bias_capacitance(self):
        # Higher bias -> smaller C_P -> higher resonances.
        rs = [tank_resonances(TankConfig(), b) for b in np.linspace(0, 8, 17)]
        assert np.all(np.diff([r.f_s_t for r in rs]) > 0)
        assert np.all(np.diff([r.f_p_t for r in rs]) > 0)

    def test_ring_reactance_sign_pattern(self):
        t = TankConfig()
        for bias in (0.0, 1.0, 4.0, 8.0):
            res = tank_resonances(t, bias)
            f = np.linspace(0.2 * res.f_s_t, 2.0 * res.f_p_t, 20001)
            f = f[np.abs(f - res.f_p_t) > 1e-6 * res.f_p_t]
            x = ring_reactance(t, bias, f)
            inside = (f > res.f_s_t) & (f < res.f_p_t)
            assert np.all(x[inside] > 0)
            assert np.all(x[~inside & (f != res.f_s_t)] < 0)


class TestRegions:
    RES = TankResonances(433e6, 593e6)

    @pytest.mark.parametrize("f, region", [
        (200e6, Region.R1), (433e6, Region.R2), (700e6, Region.R4),
        (500e6, Region.R3), (593e6, Region.R4),
        (433e6 * 0.99, Region.R2), (433e6 * 0.989, Region.R1),
        (433e6 * 1.0101, Region.R3),
    ])
    def test_classification(self, f, region):
        assert classify_region(f, self.RES, 0.01) is region

    @pytest.mark.parametrize("tol", [0.0, 0.1, -0.01])
    def test_bad_tolerance(self, tol):
        with pytest.raises(DomainError):
            classify_region(4e8, self.RES, tol)

    def test_str(self):
        assert str(Region.R3) == "R3"
