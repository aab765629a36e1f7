import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from pairbridge.schedules import (ConstantGSchedule, QuadratureError, ScheduleKind, ScheduleSpec,
                                  adaptive_simpson, bridge_gmax, bridge_vp, constant_g, eval_coeffs,
                                  make_schedule, quadrature_log_alpha, quadrature_sigma2)

from conftest import SCHEDULES

times = st.floats(0.0, 1.0, allow_nan=False)
schedule_names = st.sampled_from(sorted(SCHEDULES))


class TestConstruction:
    def test_default_constructors(self):
        assert bridge_gmax().spec.beta1 == 50.0
        assert bridge_vp().spec.beta1 == 20.0
        assert constant_g().spec.sigma == 5.0

    @pytest.mark.parametrize("kind", [ScheduleKind.GMAX, ScheduleKind.VP])
    @pytest.mark.parametrize("b0,b1", [(1.0, 1.0), (2.0, 1.0), (-0.1, 1.0), (0.0, math.inf)])
    def test_rejects_bad_betas(self, kind, b0, b1):
        with pytest.raises(ValueError):
            make_schedule(ScheduleSpec(kind, beta0=b0, beta1=b1))

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_rejects_nonpositive_sigma(self, sigma):
        with pytest.raises(ValueError):
            constant_g(sigma)

    def test_constant_ignores_betas(self):
        sched = make_schedule(ScheduleSpec(ScheduleKind.CONSTANT, beta0=5.0, beta1=1.0, sigma=2.0))
        assert isinstance(sched, ConstantGSchedule)
        assert sched.sigma2_1 == pytest.approx(4.0)

    def test_kind_aliases(self):
        assert ScheduleKind.parse("Bridge-gmax") is ScheduleKind.GMAX
        assert ScheduleKind.parse("bridge_vp") is ScheduleKind.VP
        with pytest.raises(ValueError):
            ScheduleKind.parse("cosine")

    def test_immutable(self):
        sched = bridge_gmax()
        with pytest.raises(Exception):
            sched.spec = None


class TestClosedForms:
    def test_gmax_at_one(self):
        ev = eval_coeffs(bridge_gmax(), 1.0)
        assert ev.sigma2 == pytest.approx(25.005, rel=1e-14)
        assert ev.alpha == 1.0
        assert ev.sigma2_bar == 0.0

    def test_gmax_at_half(self):
        assert bridge_gmax().sigma2(0.5) == pytest.approx(6.25375, rel=1e-14)

    def test_vp_alpha_one(self):
        # exp(-5.0025), evaluated to 30 digits with mpmath
        assert bridge_vp().alpha_1 == pytest.approx(0.00672112317013634982, rel=1e-13)
        assert bridge_vp().sigma2_1 == pytest.approx(22135.8739140620692, rel=1e-13)

    def test_sigma2_1_of_gmax_and_constant_nearly_equal(self):
        a, b = bridge_gmax().sigma2_1, constant_g().sigma2_1
        assert b == 25.0
        assert abs(a - b) / b < 1e-3

    def test_time_zero(self, schedule):
        ev = schedule.eval(0.0)
        assert ev.sigma2 == 0.0
        assert ev.alpha == 1.0
        assert ev.lam == -math.inf

    def test_lambda_interior(self, schedule):
        t = np.array([0.2, 0.7])
        np.testing.assert_allclose(schedule.lam(t), -1.0 / schedule.sigma2(t), rtol=1e-15)

    @pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9, math.nan])
    def test_time_domain(self, schedule, t):
        with pytest.raises(ValueError):
            schedule.sigma2(t)

    def test_unit_alpha_without_drift(self):
        ts = np.linspace(0, 1, 11)
        for sched in (bridge_gmax(), constant_g()):
            np.testing.assert_array_equal(sched.alpha(ts), 1.0)
            np.testing.assert_array_equal(sched.f(ts), 0.0)

    def test_vectorized_matches_scalar(self, schedule):
        ts = np.linspace(0, 1, 7)
        vec = schedule.sigma2_bar(ts)
        for t, v in zip(ts, vec):
            assert schedule.sigma2_bar(float(t)) == v


class TestProperties:
    @given(schedule_names, times)
    def test_variance_split(self, name, t):
        sched = SCHEDULES[name]
        total = sched.sigma2(t) + sched.sigma2_bar(t)
        assert abs(total - sched.sigma2_1) <= 1e-12 * sched.sigma2_1

    @given(schedule_names, times, times)
    def test_sigma2_monotone(self, name, a, b):
        sched = SCHEDULES[name]
        lo, hi = min(a, b), max(a, b)
        assert sched.sigma2(lo) <= sched.sigma2(hi)

    @given(schedule_names, times)
    def test_alpha_bar_relation(self, name, t):
        sched = SCHEDULES[name]
        assert sched.alpha_bar(t) * sched.alpha_1 == pytest.approx(sched.alpha(t), rel=1e-12)

    def test_boundaries(self, schedule):
        assert schedule.sigma2_bar(1.0) == 0.0
        assert schedule.alpha_bar(1.0) == 1.0


class TestQuadrature:
    def test_constant_integrand(self):
        assert quadrature_sigma2(constant_g(5.0), 0.4, tol=1e-10) == pytest.approx(10.0, abs=1e-10)

    def test_gmax_half(self):
        assert abs(quadrature_sigma2(bridge_gmax(), 0.5) - 6.25375) <= 1e-10

    def test_vp_one(self):
        q = quadrature_sigma2(bridge_vp(), 1.0)
        assert abs(q - math.expm1(10.005)) / math.expm1(10.005) <= 1e-8

    def test_log_alpha(self):
        assert quadrature_log_alpha(bridge_vp(), 1.0) == pytest.approx(-5.0025, abs=1e-11)

    def test_dense_grid_against_closed_form(self, schedule):
        ts = np.linspace(0, 1, 1000)
        closed = schedule.sigma2(ts)
        quads = np.array([quadrature_sigma2(schedule, float(t)) for t in ts])
        rel = np.abs(quads - closed) / np.maximum(closed, 1e-12)
        assert rel.max() <= 1e-8

    @pytest.mark.parametrize("t", [0.13, 0.5, 0.91])
    def test_agrees_with_scipy(self, schedule, t):
        ref, _ = quad(lambda s: schedule.integrand(s), 0.0, t, epsabs=1e-13, epsrel=1e-13)
        assert quadrature_sigma2(schedule, t) == pytest.approx(ref, rel=1e-9)

    def test_adaptive_simpson_polynomial_exact(self):
        assert adaptive_simpson(lambda x: x ** 3 - 2 * x, 0.0, 2.0, 1e-12) == pytest.approx(0.0, abs=1e-12)

    def test_adaptive_simpson_cap(self):
        with pytest.raises(QuadratureError):
            adaptive_simpson(lambda x: np.sin(1.0 / np.maximum(x, 1e-300)), 0.0, 1.0, 1e-14, max_intervals=64)
