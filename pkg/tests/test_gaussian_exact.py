import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from w2lab.bounds import early_stopping_rhs
from w2lab.errors import DomainError, ValidationError
from w2lab.gaussian_exact import (
    exact_sampler_w2,
    kl_pipeline_gaussian,
    kl_spherical_gaussians,
    lower_bound_eq13,
    moment_recursion,
    sampler_law,
    smoothing_w2_gaussian,
    w2_spherical_gaussians,
)
from w2lab.sampler import make_perturbed_score
from w2lab.schedules import cosine_schedule, geometric_schedule, harmonic_schedule
from w2lab.targets import GaussianMixtureTarget, SphericalGaussianTarget

mpmath.mp.dps = 60


def mp_ddpm_law(schedule, s2, mu, mu_hat, eps=0.0, u=None):
    """Replay the DDPM step on (mean, variance) of Y_i in high precision.

    The exact score at t is -(y - sqrt(t) mu) / (t s2 + 1 - t), so one step maps
    m -> (m + b s(m) + b eps u) / sqrt(1 - b),  v -> (1 - b / v_t)^2 v / (1 - b) + b.
    """
    s2 = mpmath.mpf(s2)
    t = [mpmath.mpf(x) for x in schedule.times]
    b = [mpmath.mpf(x) for x in schedule.betas]
    mu = [mpmath.mpf(x) for x in mu]
    u = [mpmath.mpf(x) for x in (u if u is not None else np.zeros(len(mu)))]
    m = [mpmath.sqrt(t[0]) * mpmath.mpf(x) for x in mu_hat]
    v = mpmath.mpf(1)
    for i in range(len(b)):
        vt = t[i] * s2 + 1 - t[i]
        rt = mpmath.sqrt(t[i])
        m = [
            (mj + b[i] * (-(mj - rt * muj) / vt) + b[i] * eps * uj) / mpmath.sqrt(1 - b[i])
            for mj, muj, uj in zip(m, mu, u)
        ]
        v = (1 - b[i] / vt) ** 2 * v / (1 - b[i]) + b[i]
    return [float(x) for x in m], float(v)


class TestMomentRecursion:
    @pytest.mark.parametrize("eps", [0.0, 0.1])
    def test_law_is_endpoint_of_full_recursion(self, eps):
        sched = geometric_schedule(128, 2.0, 4.0, 1e-3)
        target = SphericalGaussianTarget([0.3, -1.0, 2.0], 0.7)
        pert = make_perturbed_score(target, eps) if eps else None
        state = moment_recursion(sched, target, [1.0, 0.0, 0.0], pert)
        mean, var = sampler_law(sched, target, [1.0, 0.0, 0.0], pert)
        tn = sched.t_final
        np.testing.assert_allclose(mean, state.mu_seq[-1] / math.sqrt(tn), rtol=1e-13, atol=1e-15)
        assert var == pytest.approx(state.var_seq[-1] / tn, rel=1e-13)

    def test_unit_variance_matched_mean(self):
        target = SphericalGaussianTarget([1.0, -1.0], 1.0)
        mean, var = sampler_law(harmonic_schedule(10), target, target.mean)
        np.testing.assert_allclose(mean, target.mean, rtol=1e-14)
        assert var == pytest.approx(1.0, rel=1e-14)

    def test_unit_variance_offset_mean(self):
        target = SphericalGaussianTarget([1.0, -1.0], 1.0)
        s = harmonic_schedule(10)
        mu_hat = np.array([3.0, 0.0])
        mean, _ = sampler_law(s, target, mu_hat)
        np.testing.assert_allclose(mean, s.t0 * mu_hat + (1 - s.t0) * target.mean, rtol=1e-14)

    def test_matches_high_precision_replay(self):
        s = harmonic_schedule(8)
        _, var = sampler_law(s, SphericalGaussianTarget(np.zeros(1), 4.0), np.zeros(1))
        _, ref = mp_ddpm_law(s, 4.0, [0.0], [0.0])
        assert var == pytest.approx(ref, rel=1e-13)

    @pytest.mark.parametrize(
        "sched", [cosine_schedule(40, 0.008), geometric_schedule(64, 2.0, 4.0, 1e-2)], ids=["cos", "geo"]
    )
    @pytest.mark.parametrize("s2", [0.3, 2.5])
    def test_replay_with_perturbation(self, sched, s2):
        target = SphericalGaussianTarget([0.5, -1.0], s2)
        mu_hat = np.array([1.5, 0.0])
        model = make_perturbed_score(target, 0.07, direction=[1.0, 1.0])
        mean, var = sampler_law(sched, target, mu_hat, model)
        ref_m, ref_v = mp_ddpm_law(sched, s2, target.mean, mu_hat, 0.07, model.direction)
        np.testing.assert_allclose(mean, ref_m, rtol=1e-12, atol=1e-14)
        assert var == pytest.approx(ref_v, rel=1e-12)

    def test_random_mode_has_no_closed_form(self):
        target = SphericalGaussianTarget([0.0], 2.0)
        model = make_perturbed_score(target, 0.1, mode="random")
        with pytest.raises(ValidationError):
            moment_recursion(harmonic_schedule(4), target, [0.0], model)

    def test_needs_gaussian_target(self):
        mix = GaussianMixtureTarget([1.0], [[0.0]], [1.0])
        with pytest.raises(ValidationError):
            moment_recursion(harmonic_schedule(4), mix, [0.0])

    def test_csv(self):
        state = moment_recursion(harmonic_schedule(3), SphericalGaussianTarget([0.0], 2.0), [1.0])
        lines = state.to_csv().split("\r\n")
        assert lines[0] == "step,mean_gap,variance"
        assert len([ln for ln in lines if ln]) == 5


class TestDistances:
    def test_w2_examples(self):
        assert w2_spherical_gaussians([1.0, 2.0], 3.0, [1.0, 2.0], 3.0) == 0.0
        assert w2_spherical_gaussians([0.0, 0.0], 2.0, [3.0, 4.0], 2.0) == pytest.approx(5.0)
        assert w2_spherical_gaussians([0.0], 1.0, [0.0], 4.0) == pytest.approx(1.0)
        with pytest.raises(DomainError):
            w2_spherical_gaussians([0.0], -1.0, [0.0], 1.0)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-5, 5), min_size=3, max_size=3),
        st.lists(st.floats(0.01, 9), min_size=3, max_size=3),
    )
    def test_w2_is_a_metric_on_spherical_gaussians(self, means, variances):
        m = [np.array([x, 0.0]) for x in means]
        a, b, c = zip(m, variances)
        ab = w2_spherical_gaussians(*a, *b)
        assert ab == pytest.approx(w2_spherical_gaussians(*b, *a), abs=1e-12)
        assert w2_spherical_gaussians(*a, *c) <= ab + w2_spherical_gaussians(*b, *c) + 1e-9

    def test_kl_mean_only(self):
        assert kl_spherical_gaussians([1.0, 2.0], 1.0, [0.0, 0.0], 1.0) == pytest.approx(2.5)
        assert kl_spherical_gaussians([0.0], 2.0, [0.0], 2.0) == 0.0

    def test_kl_against_high_precision(self):
        d, v1, v2 = 3, 1.0 + 1e-9, 1.0
        ref = 0.5 * d * (mpmath.mpf(v1) / v2 - 1 - mpmath.log(mpmath.mpf(v1) / v2))
        assert kl_spherical_gaussians(np.zeros(d), v1, np.zeros(d), v2) == pytest.approx(float(ref), rel=1e-6)
        with pytest.raises(DomainError):
            kl_spherical_gaussians([0.0], 0.0, [0.0], 1.0)


class TestExactSamplerW2:
    @pytest.mark.parametrize("sched", [harmonic_schedule(7), cosine_schedule(30, s=0.0)])
    def test_null_case(self, sched):
        target = SphericalGaussianTarget(np.zeros(5), 1.0)
        assert exact_sampler_w2(sched, target, np.zeros(5)) <= 1e-12

    def test_unit_variance_is_initialisation_error(self):
        target = SphericalGaussianTarget([1.0, 0.0, 0.0], 1.0)
        s = harmonic_schedule(19)
        for gap in (0.0, 0.3, 7.0):
            mu_hat = target.mean + np.array([0.0, gap, 0.0])
            assert exact_sampler_w2(s, target, mu_hat) == pytest.approx(s.t0 * gap, rel=1e-13, abs=1e-16)

    def test_dimension_scaling(self):
        s = harmonic_schedule(32)
        base = exact_sampler_w2(s, SphericalGaussianTarget(np.zeros(1), 2.0), np.zeros(1))
        for d in (4, 16):
            w = exact_sampler_w2(s, SphericalGaussianTarget(np.zeros(d), 2.0), np.zeros(d))
            assert w == pytest.approx(math.sqrt(d) * base, rel=1e-12)

    def test_smoothed_reference(self):
        s = geometric_schedule(64, 2.0, 4.0, 0.05)
        target = SphericalGaussianTarget([1.0], 2.0)
        to_target = exact_sampler_w2(s, target, [0.0])
        to_smoothed = exact_sampler_w2(s, target, [0.0], reference="smoothed")
        assert to_target != to_smoothed
        with pytest.raises(ValidationError):
            exact_sampler_w2(s, target, [0.0], reference="other")


class TestLowerBound:
    def test_unit_variance_is_zero(self):
        assert lower_bound_eq13(0.1, 0.05, SphericalGaussianTarget([0.0], 1.0), [3.0]) == 0.0

    def test_matched_mean_is_zero(self):
        assert lower_bound_eq13(0.1, 0.05, SphericalGaussianTarget([0.0], 4.0), [0.0]) == 0.0

    def test_against_high_precision_formula(self):
        d, t0, eta, gap = 16, mpmath.mpf("0.1"), mpmath.mpf("0.05"), mpmath.mpf(1)
        s2, sig = mpmath.mpf(4), mpmath.mpf(2)
        big = max(s2, 1)
        second = s2 * abs(s2 - 1) / (2 * max(sig**3, 1)) * (
            mpmath.sqrt(d) * t0**2 + (1 - t0**2) / (2 * big) * mpmath.sqrt(d) * eta
        )
        ref = s2 / big * min(t0 * gap, second)
        mu_hat = np.zeros(d)
        mu_hat[0] = 1.0
        val = lower_bound_eq13(0.1, 0.05, SphericalGaussianTarget(np.zeros(d), 4.0), mu_hat)
        assert val == pytest.approx(float(ref), rel=1e-14)

    def test_domination_small_grid(self):
        for sigma in (0.5, 2.0):
            target = SphericalGaussianTarget(np.zeros(4), sigma**2)
            for n in (8, 33, 100):
                s = harmonic_schedule(n)
                for gap in (0.0, 1.0, 10.0):
                    mu_hat = np.array([gap, 0, 0, 0])
                    lb = lower_bound_eq13(s.t0, s.betas.min(), target, mu_hat)
                    assert exact_sampler_w2(s, target, mu_hat) >= lb - 1e-9

    def test_eta_domain(self):
        with pytest.raises(DomainError):
            lower_bound_eq13(0.1, 1.5, SphericalGaussianTarget([0.0], 4.0), [0.0])


class TestSmoothing:
    def test_examples(self):
        assert smoothing_w2_gaussian(SphericalGaussianTarget([2.0], 3.0), 1.0) == 0.0
        assert smoothing_w2_gaussian(SphericalGaussianTarget(np.zeros(3), 1.0), 0.3) == pytest.approx(0.0, abs=1e-15)
        lhs = smoothing_w2_gaussian(SphericalGaussianTarget(np.zeros(8), 4.0), 0.99)
        assert lhs <= early_stopping_rhs(32.0, 8, 0.01).value
        with pytest.raises(DomainError):
            smoothing_w2_gaussian(SphericalGaussianTarget([0.0], 1.0), 0.0)

    def test_formula(self):
        t, s2 = 0.81, 4.0
        target = SphericalGaussianTarget([1.0, 1.0], s2)
        expected = math.sqrt(2 * (1 - 0.9) ** 2 + 2 * (math.sqrt(t * s2 + 1 - t) - 2) ** 2)
        assert smoothing_w2_gaussian(target, t) == pytest.approx(expected, rel=1e-13)


class TestKL:
    def test_identical_laws(self):
        target = SphericalGaussianTarget([1.0, 2.0], 1.0)
        assert kl_pipeline_gaussian(harmonic_schedule(16), target, target.mean) == 0.0

    def test_unit_variance_matched_mean_is_exact_for_any_schedule(self):
        # the pipeline reproduces S_{t_N} P* exactly when P* = N(mu, I) and mu_hat = mu
        target = SphericalGaussianTarget([1.0, -1.0], 1.0)
        for n in (16, 256):
            s = geometric_schedule(n, 2.0, 4.0, 1e-3)
            assert kl_pipeline_gaussian(s, target, target.mean) == pytest.approx(0.0, abs=1e-20)

    def test_decreasing_in_steps_with_offset(self):
        target = SphericalGaussianTarget([0.0, 0.0], 1.0)
        kls = [kl_pipeline_gaussian(harmonic_schedule(n), target, [1.0, 0.0]) for n in (4, 16, 64, 256)]
        assert all(b < a for a, b in zip(kls, kls[1:]))
        # mean-only mismatch with unit variances: KL = |t0 gap|^2 / 2
        assert kls[0] == pytest.approx(0.5 * (1 / 5) ** 2, rel=1e-13)
