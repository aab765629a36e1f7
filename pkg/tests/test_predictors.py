import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pairbridge.bridge import bridge_state, marginal_params
from pairbridge.predictors import (NOT_RECOMMENDED, ConstantPredictor, GaussianPosteriorOracle, GaussianTaskParams,
                                   Parameterization, SingularTargetError, X0View, target_for, to_x0, velocity)
from pairbridge.schedules import bridge_gmax, constant_g

from conftest import SCHEDULES

vec2 = arrays(float, 2, elements=st.floats(-5, 5, allow_nan=False))
interior = st.floats(1e-3, 1 - 1e-3)


class TestTargets:
    def test_sb_noise_target_is_the_noise(self, schedule, rng):
        x0, x1, eps = rng.normal(size=(3, 4, 2))
        t = rng.uniform(0.05, 0.95, 4)
        np.testing.assert_allclose(target_for("noise_sb", schedule, t, x0, x1, eps), eps, rtol=1e-9, atol=1e-9)

    def test_x0_target(self, schedule, rng):
        x0, x1, eps = rng.normal(size=(3, 2))
        np.testing.assert_array_equal(target_for(Parameterization.X0, schedule, 0.0, x0, x1, eps), x0)

    @pytest.mark.parametrize("sigma", [1.0, 5.0])
    def test_psi_hat_closed_form_constant_g(self, sigma, rng):
        # sigma * target equals sqrt(t)(x1 - x0) + sigma sqrt(1-t) eps; the two agree outright at sigma = 1
        sched = constant_g(sigma)
        x0, x1, eps = rng.normal(size=(3, 2))
        t = 0.3
        target = target_for("noise_psi_hat", sched, t, x0, x1, eps)
        expect = np.sqrt(t) * (x1 - x0) + sigma * np.sqrt(1 - t) * eps
        np.testing.assert_allclose(sigma * target, expect, rtol=1e-12)

    def test_velocity_closed_form_constant_g(self, rng):
        sigma = 3.0
        sched = constant_g(sigma)
        x0, x1, eps = rng.normal(size=(3, 2))
        for t in (0.2, 0.5, 0.8):
            v = target_for("velocity", sched, t, x0, x1, eps)
            expect = np.sqrt(t * (1 - t)) * (x1 - x0) + sigma * (1 - 2 * t) / 2 * eps
            np.testing.assert_allclose(np.sqrt(t * (1 - t)) * v, expect, rtol=1e-12, atol=1e-12)
        v = target_for("velocity", sched, 0.5, x0, x1, np.zeros(2))
        np.testing.assert_allclose(v, x1 - x0, rtol=1e-12)

    def test_boundary_behaviour_near_prior(self, rng):
        # as t -> 1, SB-noise and velocity targets lose their data dependence while the others keep it
        sched = constant_g(1.0)
        x1, eps = rng.normal(size=(2, 2))
        xa, xb = np.zeros(2), np.full(2, 3.0)
        t = 1 - 1e-8
        def spread(p):
            return np.abs(target_for(p, sched, t, xa, x1, eps) - target_for(p, sched, t, xb, x1, eps)).max()
        assert spread("noise_sb") < 1e-3
        assert spread("velocity") * np.sqrt(t * (1 - t)) < 1e-3
        assert spread("x0") > 1.0 and spread("noise_psi_hat") > 1.0

    @pytest.mark.parametrize("param", ["noise_psi_hat", "noise_sb", "velocity"])
    def test_singular_at_zero(self, schedule, param):
        with pytest.raises(SingularTargetError):
            target_for(param, schedule, 0.0, np.zeros(2), np.zeros(2), np.zeros(2))

    @pytest.mark.parametrize("param", sorted(p.value for p in NOT_RECOMMENDED))
    def test_singular_at_one(self, schedule, param):
        with pytest.raises(SingularTargetError):
            target_for(param, schedule, 1.0, np.zeros(2), np.zeros(2), np.zeros(2))
        with pytest.raises(SingularTargetError):
            to_x0(param, np.zeros(2), schedule, 1.0, np.zeros(2), np.zeros(2))

    def test_parse(self):
        assert Parameterization.parse("V") is Parameterization.VELOCITY
        with pytest.raises(ValueError):
            Parameterization.parse("score")


class TestInversion:
    @given(st.sampled_from(sorted(SCHEDULES)), st.sampled_from(list(Parameterization)), interior, vec2, vec2, vec2)
    def test_roundtrip(self, name, param, t, x0, x1, eps):
        sched = SCHEDULES[name]
        target = target_for(param, sched, t, x0, x1, eps)
        x_t = bridge_state(sched, t, x0, x1, eps)
        back = to_x0(param, target, sched, t, x_t, x1)
        np.testing.assert_allclose(back, x0, rtol=1e-8, atol=1e-8)

    def test_roundtrip_tight_on_moderate_inputs(self, schedule, rng):
        for param in Parameterization:
            x0, x1, eps = rng.normal(size=(3, 50, 2))
            t = rng.uniform(0.05, 0.95, 50)
            x_t = bridge_state(schedule, t, x0, x1, eps)
            back = to_x0(param, target_for(param, schedule, t, x0, x1, eps), schedule, t, x_t, x1)
            assert np.max(np.abs(back - x0)) <= 1e-10

    def test_x0_identity(self, schedule):
        out = np.array([0.3, -0.2])
        assert to_x0("x0", out, schedule, 0.0, np.zeros(2), np.zeros(2)) is out

    def test_psi_hat_formula(self, schedule, rng):
        out, x_t, x1 = rng.normal(size=(3, 2))
        t = 0.4
        expect = (x_t - schedule.alpha(t) * schedule.sigma(t) * out) / schedule.alpha(t)
        np.testing.assert_allclose(to_x0("noise_psi_hat", out, schedule, t, x_t, x1), expect, rtol=1e-14)

    def test_velocity_matches_drift_definition(self, schedule, rng):
        x_t, x0, x1 = rng.normal(size=(3, 2))
        v = velocity(schedule, 0.35, x_t, x0, x1)
        np.testing.assert_allclose(to_x0("velocity", v, schedule, 0.35, x_t, x1), x0, rtol=1e-9)


class TestOracle:
    def test_matches_textbook_form(self, schedule, rng):
        task = GaussianTaskParams(np.array([1.0, -0.5]), 0.7)
        oracle = GaussianPosteriorOracle(schedule, task)
        x1 = np.array([0.2, 0.4])
        for t in (0.1, 0.5, 0.9):
            x_t = rng.normal(size=2)
            mp = marginal_params(schedule, t)
            s2 = task.s2
            expect = (s2 * mp.w0 * (x_t - mp.w1 * x1) + mp.var * task.m) / (mp.w0 ** 2 * s2 + mp.var)
            np.testing.assert_allclose(oracle(x_t, t, x1), expect, rtol=1e-12)

    def test_identity_at_zero(self, schedule, rng):
        oracle = GaussianPosteriorOracle(schedule, GaussianTaskParams(np.zeros(2), 1.0))
        x_t = rng.normal(size=2)
        np.testing.assert_allclose(oracle(x_t, 0.0, x_t + 1.0), x_t, rtol=1e-15)

    def test_mean_at_prior_point(self, schedule):
        m = np.array([1.0, 2.0])
        oracle = GaussianPosteriorOracle(schedule, GaussianTaskParams(m, 1.0))
        x1 = np.array([-3.0, 0.5])
        np.testing.assert_allclose(oracle(x1, 1.0, x1), m, rtol=1e-14)

    def test_dirac_returns_mean(self, schedule, rng):
        m = np.array([1.0, 2.0])
        oracle = GaussianPosteriorOracle(schedule, GaussianTaskParams(m, 0.0))
        for t in (0.0, 0.3, 1.0):
            np.testing.assert_allclose(oracle(rng.normal(size=2) * 5, t, m), m)

    def test_batched_times(self, schedule, rng):
        oracle = GaussianPosteriorOracle(schedule, GaussianTaskParams(np.array([1.0, 2.0]), 1.0))
        t = np.array([0.0, 0.4, 1.0])
        x_t, x1 = rng.normal(size=(2, 3, 2))
        out = oracle(x_t, t, x1)
        for i in range(3):
            np.testing.assert_allclose(out[i], oracle(x_t[i], t[i], x1[i]), rtol=1e-14)

    def test_affine_form(self, schedule, rng):
        oracle = GaussianPosteriorOracle(schedule, GaussianTaskParams(np.array([1.0, 2.0]), 1.0))
        gain, offset = oracle.affine(0.3, np.array([0.5, 0.5]))
        x = rng.normal(size=2)
        np.testing.assert_allclose(oracle(x, 0.3, np.array([0.5, 0.5])), gain * x + offset)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            GaussianTaskParams(np.zeros(2), -0.1)

    def test_against_monte_carlo_regression(self, rng):
        sched = bridge_gmax()
        task = GaussianTaskParams(np.array([1.0, -1.0]), 1.0)
        oracle = GaussianPosteriorOracle(sched, task)
        x1 = np.array([0.5, 0.0])
        n = 1_000_000
        t = 0.4
        x0 = task.m + rng.standard_normal((n, 2))
        x_t = bridge_state(sched, t, x0, x1, rng.standard_normal((n, 2)))
        design = np.column_stack([x_t, np.ones(n)])
        coef, *_ = np.linalg.lstsq(design, x0, rcond=None)
        probes = np.array([[a, b] for a in (-2.0, 0.0, 2.0) for b in (-2.0, 0.0, 2.0)])
        fitted = np.column_stack([probes, np.ones(len(probes))]) @ coef
        assert np.max(np.abs(fitted - oracle(probes, t, x1))) <= 1e-2


class TestSimplePredictors:
    def test_constant(self, rng):
        c = ConstantPredictor([1.0, 2.0])
        out = c(rng.normal(size=(5, 2)), 0.3, np.zeros(2))
        np.testing.assert_array_equal(out, np.tile([1.0, 2.0], (5, 1)))

    def test_x0_view_clips_time(self, schedule):
        class Probe:
            parameterization = Parameterization.NOISE_SB
            seen = []

            def __call__(self, x_t, t, x1):
                self.seen.append(t)
                return np.zeros_like(x_t)

        view = X0View(Probe(), schedule, t_min=1e-3)
        out = view(np.ones(2), 1.0, np.ones(2))
        assert Probe.seen[-1] == pytest.approx(1 - 1e-3)
        assert np.all(np.isfinite(out))
