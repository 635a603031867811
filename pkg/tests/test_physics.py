import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinqubit.physics import (
    K_B_UEV_PER_MK,
    DomainError,
    ErrorBudget,
    PhysicalParams,
    derive_rates,
    fermi_occupation,
    keith_conditions,
    missed_bump_probability,
    predict_budget,
    relaxation_error,
    thermal_escape_probability,
    thermal_energy,
    zeeman_convert,
)

# Reference values below were evaluated independently with mpmath at 30
# digits from the CODATA constants and the closed-form expressions.
KT_45MK = 3.87779996796533
FERMI_3878_45 = 0.268931279481137
DOWN_RATIO_45 = 3.76872721631946e-05
RELAX_50_10_5 = 0.0119282871380695
RELAX_DEVICE = 0.00190294899704019
PMISS_25_100 = 0.00250415099840756
PMISS_100_25 = 0.00994191581836232
PMISS_DIAG_50 = 0.00499166668055552
KEITH_200MK = 4.58378465801228
KEITH_45MK = 20.3723762578324
THERMAL_DEVICE = 0.000504881951179133


def test_thermal_energy_constant():
    assert thermal_energy(45.0) == pytest.approx(KT_45MK, rel=1e-12)
    with pytest.raises(DomainError):
        thermal_energy(0.0)


class TestFermi:
    def test_half_at_fermi_level(self):
        for t in (1.0, 45.0, 300.0):
            assert fermi_occupation(0.0, t) == 0.5

    def test_one_kt(self):
        assert fermi_occupation(thermal_energy(45.0), 45.0) == pytest.approx(1 / (1 + math.e), rel=1e-14)

    def test_device_kt(self):
        assert fermi_occupation(3.878, 45.0) == pytest.approx(FERMI_3878_45, rel=1e-12)

    def test_rejects_non_positive_temperature(self):
        with pytest.raises(DomainError):
            fermi_occupation(1.0, -5.0)

    def test_extreme_arguments_do_not_overflow(self):
        assert fermi_occupation(1e6, 1.0) == 0.0
        assert fermi_occupation(-1e6, 1.0) == 1.0

    @given(st.floats(-500, 500), st.floats(0.5, 2000))
    def test_particle_hole_symmetry(self, e, t):
        assert fermi_occupation(e, t) + fermi_occupation(-e, t) == pytest.approx(1.0, abs=1e-15)

    @given(st.floats(-200, 200), st.floats(0.01, 50), st.floats(1, 500))
    def test_monotone_decreasing(self, e, de, t):
        assert fermi_occupation(e + de, t) <= fermi_occupation(e, t)


class TestZeeman:
    def test_device_value(self):
        assert zeeman_convert(19.105) == pytest.approx(79.0, abs=0.1)

    def test_zero_and_unit(self):
        assert zeeman_convert(0.0) == 0.0
        assert zeeman_convert(1.0) == pytest.approx(4.1357, abs=5e-5)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            zeeman_convert(-1.0)


class TestParams:
    @pytest.mark.parametrize(
        "change",
        [
            {"zeeman_energy": 0.0},
            {"electron_temperature": -1.0},
            {"fermi_offset_delta": 0.0},
            {"fermi_offset_delta": 79.0},
            {"base_tunnel_rate": 0.0},
            {"t1_relaxation": 0.0},
            {"sensor_snr": 0.0},
            {"sampling_rate": -1.0},
            {"settle_time": 0.0},
            {"sensor_level_empty": 0.15},
        ],
    )
    def test_invariants(self, change):
        with pytest.raises(DomainError):
            PhysicalParams(**change)

    def test_derived_properties(self):
        p = PhysicalParams()
        assert p.sample_time == 1.0
        assert p.level_separation == pytest.approx(0.14)
        assert p.noise_sigma == pytest.approx(0.0112)


class TestRates:
    def test_symmetric_point(self):
        for t in (20.0, 45.0, 200.0):
            r = derive_rates(PhysicalParams(electron_temperature=t))
            assert r.up_out == pytest.approx(r.down_in, rel=1e-14)

    def test_device_rates(self):
        r = derive_rates(PhysicalParams())
        assert r.t_up_out == pytest.approx(50.0, rel=1e-3)
        assert r.t_down_in == pytest.approx(50.0, rel=1e-3)
        assert r.relax == pytest.approx(1 / 31.5e-3)

    def test_retuned_barrier_at_30_uev(self):
        # with Δ = 30 µeV the spin-down level is deep and Γ↓_in ≈ Γ₀; Γ↑_out
        # too since E_Z − Δ = 49 µeV ≫ k_B T
        r = derive_rates(PhysicalParams(fermi_offset_delta=30.0))
        assert r.up_out == pytest.approx(20e3, rel=1e-4)
        assert r.down_in == pytest.approx(20e3, rel=1e-3)

    def test_thermal_ratio_at_half_zeeman(self):
        r = derive_rates(PhysicalParams())
        assert r.down_out / r.down_in == pytest.approx(DOWN_RATIO_45, rel=1e-9)

    def test_rates_bounded_by_gamma0(self):
        r = derive_rates(PhysicalParams())
        assert 0 <= r.up_out <= 20e3 and 0 <= r.down_in <= 20e3

    def test_detailed_balance_random_draws(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            ez = rng.uniform(5, 200)
            t = rng.uniform(5, 500)
            delta = rng.uniform(0.02, 0.98) * ez
            p = PhysicalParams(zeeman_energy=ez, electron_temperature=t, fermi_offset_delta=delta,
                               base_tunnel_rate=rng.uniform(1e2, 1e6))
            r = derive_rates(p)
            kt = K_B_UEV_PER_MK * t
            assert r.down_out / r.down_in == pytest.approx(math.exp(-delta / kt), rel=1e-12)
            if r.up_out > 0:
                assert r.up_in / r.up_out == pytest.approx(math.exp(-(ez - delta) / kt), rel=1e-12)


class TestKeith:
    def test_device_ratios(self):
        p = PhysicalParams()
        k = keith_conditions(p, derive_rates(p))
        assert [c.threshold for c in k] == [13.0, 100.0, 12.0]
        assert k[0].ratio == pytest.approx(KEITH_45MK, rel=1e-9)
        assert k[1].ratio == pytest.approx(630, rel=1e-3)
        assert k[2].ratio == pytest.approx(50, rel=1e-3)
        assert all(c.passed for c in k)

    def test_hot_electrons_fail_first_condition(self):
        p = PhysicalParams(electron_temperature=200.0)
        k = keith_conditions(p, derive_rates(p))
        assert k[0].ratio == pytest.approx(KEITH_200MK, rel=1e-9)
        assert not k[0].passed and k[1].passed and k[2].passed

    def test_infinite_t1(self):
        p = PhysicalParams(t1_relaxation=math.inf)
        k = keith_conditions(p, derive_rates(p))
        assert math.isinf(k[1].ratio) and k[1].passed

    @given(st.floats(1e-3, 10.0))
    def test_linear_in_t1(self, t1):
        base = PhysicalParams(t1_relaxation=t1)
        double = PhysicalParams(t1_relaxation=2 * t1)
        r1 = keith_conditions(base, derive_rates(base))[1].ratio
        r2 = keith_conditions(double, derive_rates(double))[1].ratio
        assert r2 == pytest.approx(2 * r1, rel=1e-12)


class TestRelaxation:
    def test_device_value(self):
        assert relaxation_error(50, 10, 31.5) == pytest.approx(RELAX_DEVICE, rel=1e-12)
        assert 0.0018 <= relaxation_error(50, 10, 31.5) <= 0.0020

    def test_arithmetic(self):
        assert relaxation_error(50, 10, 5) == pytest.approx(RELAX_50_10_5, rel=1e-12)

    def test_infinite_t1(self):
        assert relaxation_error(123.0, 45.0, math.inf) == 0.0


class TestMissedBump:
    def test_device_value(self):
        assert missed_bump_probability(50, 50, 1) == pytest.approx(PMISS_DIAG_50, rel=1e-9)

    def test_off_diagonal(self):
        assert missed_bump_probability(25, 100, 1) == pytest.approx(PMISS_25_100, rel=1e-9)
        assert missed_bump_probability(100, 25, 1) == pytest.approx(PMISS_100_25, rel=1e-9)

    def test_zero_sample_time(self):
        assert missed_bump_probability(50, 50, 0.0) == 0.0
        assert missed_bump_probability(50, 50, 1e-9) < 1e-10

    @given(st.floats(5, 500), st.floats(5, 500), st.floats(0.01, 5), st.floats(1.01, 3))
    def test_monotone_in_sample_time(self, tu, td, ts, k):
        assert missed_bump_probability(tu, td, ts * k) >= missed_bump_probability(tu, td, ts)

    @given(st.floats(5, 500), st.floats(0.05, 5))
    def test_continuous_across_diagonal(self, t, ts):
        on = missed_bump_probability(t, t, ts)
        for eps in (1e-6, -1e-6):
            near = missed_bump_probability(t * (1 + eps), t, ts)
            assert near == pytest.approx(on, rel=1e-5, abs=1e-12)

    @given(st.floats(1, 1000), st.floats(1, 1000), st.floats(0.001, 50))
    def test_is_probability(self, tu, td, ts):
        assert 0.0 <= missed_bump_probability(tu, td, ts) <= 1.0


class TestThermalEscape:
    def test_device_value(self):
        p = thermal_escape_probability(50, 79, 45, 670)
        assert p == pytest.approx(THERMAL_DEVICE, rel=1e-9)
        assert 0.0004 <= p <= 0.0008

    def test_zero_window(self):
        assert thermal_escape_probability(50, 79, 45, 0.0) == 0.0

    def test_linear_for_small_probability(self):
        a = thermal_escape_probability(50, 79, 45, 670)
        b = thermal_escape_probability(50, 79, 45, 1340)
        assert b == pytest.approx(2 * a, rel=1e-3)

    @given(st.floats(10, 2000), st.floats(1.01, 3), st.floats(10, 300))
    def test_monotone_in_window_and_temperature(self, tr, k, t):
        assert thermal_escape_probability(50, 79, t, tr * k) >= thermal_escape_probability(50, 79, t, tr)
        assert thermal_escape_probability(50, 79, t * k, tr) >= thermal_escape_probability(50, 79, t, tr)


class TestBudget:
    def test_device_budget(self):
        p = PhysicalParams()
        b = predict_budget(p, derive_rates(p), 670.0)
        assert b.predicted_f_up == pytest.approx(0.993, abs=1e-3)
        assert b.predicted_f_down == pytest.approx(0.999, abs=1e-3)
        assert b.predicted_visibility == pytest.approx(0.992, abs=1e-3)
        # within 0.3 pp of the measured values
        assert abs(b.predicted_f_up - 0.9926) < 0.003
        assert abs(b.predicted_f_down - 0.9986) < 0.003
        assert abs(b.predicted_visibility - 0.9912) < 0.003

    def test_zero_errors(self):
        b = ErrorBudget(0.0, 0.0, 0.0)
        assert b.predicted_visibility == 1.0

    @given(st.floats(0, 0.3), st.floats(0, 0.3), st.floats(0, 0.3))
    def test_visibility_identity(self, r, m, t):
        b = ErrorBudget(r, m, t)
        assert b.predicted_visibility == pytest.approx(b.predicted_f_up + b.predicted_f_down - 1, abs=1e-15)
