import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from w2lab.errors import DomainError, NumericalError, ValidationError
from w2lab.targets import (
    ConstantProfile,
    GaussianMixtureTarget,
    SphericalGaussianTarget,
    SqrtBlowupProfile,
    TabulatedProfile,
    cor1_lambda,
    gaussian_regularity,
    log_density,
    profile_from_dict,
    sample_target,
    score_exact,
    score_fd_oracle,
    smoothed_law,
    target_from_dict,
)


def symmetric_mixture(m=1.5, v=0.5, d=1):
    means = np.zeros((2, d))
    means[:, 0] = (-m, m)
    return GaussianMixtureTarget([0.5, 0.5], means, [v, v])


def random_mixture(rng, d):
    k = int(rng.integers(2, 5))
    return GaussianMixtureTarget(
        rng.dirichlet(np.ones(k)), rng.normal(0, 2, (k, d)), rng.uniform(0.2, 3.0, k)
    )


class TestTargetTypes:
    def test_gaussian_summaries(self):
        g = SphericalGaussianTarget([1.0, 2.0, 3.0], 4.0)
        assert g.dim == 3 and g.trace_sigma == 12.0 and g.sigma_op == 4.0 and g.Lambda == 4.0
        assert SphericalGaussianTarget([0.0], 0.5).Lambda == 1.0

    def test_mixture_moments_by_brute_force(self):
        rng = np.random.default_rng(0)
        mix = random_mixture(rng, 3)
        w, m, v = mix.weights, mix.component_means, mix.component_variances
        mean = (w[:, None] * m).sum(0)
        cov = sum(wk * (vk * np.eye(3) + np.outer(mk - mean, mk - mean)) for wk, mk, vk in zip(w, m, v))
        np.testing.assert_allclose(mix.mean, mean, rtol=1e-13)
        np.testing.assert_allclose(mix.covariance, cov, rtol=1e-12, atol=1e-14)
        assert mix.trace_sigma == pytest.approx(np.trace(cov), rel=1e-12)
        assert mix.sigma_op == pytest.approx(np.linalg.eigvalsh(cov).max(), rel=1e-12)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(weights=[0.5, 0.6], component_means=[[0.0], [1.0]], component_variances=[1, 1]),
            dict(weights=[1.0], component_means=[[0.0]], component_variances=[0.0]),
            dict(weights=[0.5, 0.5], component_means=[[0.0]], component_variances=[1, 1]),
        ],
    )
    def test_invalid_mixtures(self, kwargs):
        with pytest.raises(ValidationError):
            GaussianMixtureTarget(**kwargs)

    def test_invalid_gaussian(self):
        with pytest.raises(ValidationError):
            SphericalGaussianTarget([0.0], -1.0)

    def test_dict_round_trip(self):
        mix = symmetric_mixture(d=2)
        back = target_from_dict(mix.to_dict())
        np.testing.assert_array_equal(back.component_means, mix.component_means)
        g = target_from_dict({"kind": "gaussian", "d": 3, "variance": 2.0})
        np.testing.assert_array_equal(g.mean, np.zeros(3))
        with pytest.raises(ValidationError):
            target_from_dict({"kind": "laplace"})
        with pytest.raises(ValidationError):
            target_from_dict({"kind": "gaussian", "d": 2})


class TestSmoothedLaw:
    def test_standard_normal_is_invariant(self):
        law = smoothed_law(SphericalGaussianTarget(np.zeros(2), 1.0), 0.37)
        assert law.variance == pytest.approx(1.0)
        np.testing.assert_array_equal(law.mean, 0.0)

    def test_gaussian_half(self):
        mu = np.array([1.0, -2.0])
        law = smoothed_law(SphericalGaussianTarget(mu, 4.0), 0.5)
        np.testing.assert_allclose(law.mean, mu / math.sqrt(2))
        assert law.variance == pytest.approx(2.5)

    def test_mixture_density_matches_convolution_quadrature(self):
        mix = GaussianMixtureTarget([0.3, 0.7], [[-1.0], [2.0]], [0.5, 1.5])
        t = 0.25
        rt, s = mpmath.sqrt(t), mpmath.sqrt(1 - t)

        def p_target(x):
            return sum(
                w * mpmath.npdf(x, m, mpmath.sqrt(v))
                for w, m, v in zip([0.3, 0.7], [-1.0, 2.0], [0.5, 1.5])
            )

        for y in (-2.0, 0.0, 0.7, 3.0):
            # density of sqrt(t) X + sqrt(1-t) Z at y
            dens = mpmath.quad(lambda x: p_target(x) * mpmath.npdf(y, rt * x, s), [-mpmath.inf, 0, mpmath.inf])
            assert log_density(mix, t, np.array([y])) == pytest.approx(float(mpmath.log(dens)), rel=1e-12)

    def test_converges_to_target_near_one(self):
        g = SphericalGaussianTarget([1.0, 2.0], 3.0)
        law = smoothed_law(g, 1 - 1e-9)
        np.testing.assert_allclose(law.mean, g.mean, rtol=1e-8)
        assert law.variance == pytest.approx(3.0, rel=1e-8)

    @pytest.mark.parametrize("t", [-0.1, 1.0, 1.5])
    def test_domain(self, t):
        with pytest.raises(DomainError):
            smoothed_law(SphericalGaussianTarget([0.0], 1.0), t)


class TestScore:
    def test_standard_normal(self):
        y = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(score_exact(SphericalGaussianTarget(np.zeros(3), 1.0), 0.4, y), -y)

    def test_gaussian_formula(self):
        y = np.array([1.0, -3.0])
        np.testing.assert_allclose(score_exact(SphericalGaussianTarget(np.zeros(2), 4.0), 0.5, y), -y / 2.5)

    def test_symmetric_mixture_midpoint(self):
        np.testing.assert_allclose(score_exact(symmetric_mixture(d=2), 0.6, np.zeros(2)), 0.0, atol=1e-15)

    def test_batch_equals_pointwise(self):
        rng = np.random.default_rng(3)
        mix = random_mixture(rng, 2)
        ys = rng.normal(size=(7, 2))
        batch = score_exact(mix, 0.3, ys)
        for y, s in zip(ys, batch):
            np.testing.assert_allclose(score_exact(mix, 0.3, y), s, rtol=1e-14)

    @pytest.mark.parametrize("t", [0.0, 1.0])
    def test_domain(self, t):
        with pytest.raises(DomainError):
            score_exact(SphericalGaussianTarget([0.0], 1.0), t, [0.0])

    def test_gaussian_score_is_affine(self):
        g = SphericalGaussianTarget([1.0, -1.0], 2.5)
        t = 0.3
        a, b = np.array([0.2, 0.1]), np.array([-1.0, 3.0])
        sa, sb, sm = (score_exact(g, t, y) for y in (a, b, 0.25 * a + 0.75 * b))
        np.testing.assert_allclose(sm, 0.25 * sa + 0.75 * sb, atol=1e-12)
        slope = -1 / (t * 2.5 + 1 - t)
        np.testing.assert_allclose(sb - sa, slope * (b - a), atol=1e-12)

    def test_far_tail_is_stable(self):
        mix = symmetric_mixture(d=1)
        s = score_exact(mix, 0.9, np.array([[200.0], [-300.0]]))
        assert np.all(np.isfinite(s))


class TestFiniteDifferenceOracle:
    def test_standard_normal(self):
        y = np.array([0.5, -1.0])
        np.testing.assert_allclose(score_fd_oracle(SphericalGaussianTarget(np.zeros(2), 1.0), 0.5, y), -y, atol=1e-8)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_matches_exact_on_random_points(self, d):
        rng = np.random.default_rng(100 + d)
        for _ in range(100):
            target = random_mixture(rng, d) if rng.random() < 0.7 else SphericalGaussianTarget(
                rng.normal(size=d), float(rng.uniform(0.3, 3))
            )
            t = float(rng.uniform(0.01, 0.99))
            y = rng.normal(0, 2, d)
            a, b = score_exact(target, t, y), score_fd_oracle(target, t, y)
            assert np.linalg.norm(a - b) <= 1e-5 * max(np.linalg.norm(b), 1.0)

    def test_antisymmetry(self):
        mix = symmetric_mixture(d=1)
        y = np.array([0.8])
        np.testing.assert_allclose(score_fd_oracle(mix, 0.5, y), -score_fd_oracle(mix, 0.5, -y), rtol=1e-9)

    def test_refuses_high_dimension_and_bad_step(self):
        with pytest.raises(ValidationError):
            score_fd_oracle(SphericalGaussianTarget(np.zeros(4), 1.0), 0.5, np.zeros(4))
        with pytest.raises(ValidationError):
            score_fd_oracle(SphericalGaussianTarget(np.zeros(1), 1.0), 0.5, np.zeros(1), h=0.1)

    def test_underflow_advises_smaller_point(self):
        with pytest.raises(NumericalError, match="smaller"):
            score_fd_oracle(SphericalGaussianTarget(np.zeros(1), 0.01), 0.999, np.array([80.0]))


class TestProfiles:
    def test_constant(self):
        p = ConstantProfile(0.3)
        assert p(0.5) == 0.3
        np.testing.assert_array_equal(p(np.array([0.1, 0.2])), [0.3, 0.3])
        assert p.scaled(2).value == 0.6

    def test_sqrt_blowup_monotone(self):
        p = SqrtBlowupProfile(0.1)
        grid = np.linspace(0.01, 0.999, 500)
        assert p.is_non_decreasing(grid)
        assert p(0.75) == pytest.approx(0.2)

    def test_tabulated(self):
        p = TabulatedProfile((0.0, 0.5, 1.0), (0.0, 1.0, 1.0))
        assert p(0.25) == pytest.approx(0.5)
        with pytest.raises(ValidationError):
            TabulatedProfile((0.0, 1.0), (1.0, 0.5))

    def test_from_dict(self):
        for p in (ConstantProfile(0.2), SqrtBlowupProfile(0.1), TabulatedProfile((0.0, 1.0), (0.0, 2.0))):
            assert profile_from_dict(p.to_dict()) == p
        assert profile_from_dict(0.05) == ConstantProfile(0.05)
        with pytest.raises(ValidationError):
            profile_from_dict({"kind": "cubic"})


class TestRegularity:
    @pytest.mark.parametrize("s2, lam", [(1.0, 0.0), (4.0, 3.0), (0.25, 3.0)])
    def test_lambda(self, s2, lam):
        reg = gaussian_regularity(SphericalGaussianTarget([0.0], s2))
        assert reg.lam == pytest.approx(lam)

    def test_unit_variance_has_zero_envelope(self):
        reg = gaussian_regularity(SphericalGaussianTarget([0.0], 1.0))
        assert reg.L(0.5) == 0.0
        assert gaussian_regularity(SphericalGaussianTarget([0.0], 1.0), floor=0.1).L(0.5) == 0.1

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 20.0))
    def test_lambda_minimised_at_unit_variance(self, s2):
        assert gaussian_regularity(SphericalGaussianTarget([0.0], s2)).lam >= 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 20.0), st.floats(0.01, 0.99))
    def test_envelope_covers_exact_hessian(self, s2, t):
        # grad^2 log f_t = t (s2 - 1) / ((s2 - 1) t + 1), must lie within [-t L, t L]
        reg = gaussian_regularity(SphericalGaussianTarget([0.0], s2))
        h = t * (s2 - 1) / ((s2 - 1) * t + 1)
        assert abs(h) <= t * reg.L(t) * (1 + 1e-12)

    def test_cor1_lambda_validation(self):
        with pytest.raises(ValidationError):
            cor1_lambda(1.0, 0.0, 0.0)


class TestSampling:
    def test_gaussian_clt_band(self):
        n = 10**5
        x = sample_target(SphericalGaussianTarget(np.zeros(4), 1.0), n, seed=1)
        assert np.all(np.abs(x.mean(0)) <= 4 / math.sqrt(n))

    def test_mixture_weights_in_multinomial_band(self):
        n = 20000
        mix = GaussianMixtureTarget([0.2, 0.8], [[-50.0], [50.0]], [1.0, 1.0])
        x = sample_target(mix, n, seed=2)
        count = int((x[:, 0] < 0).sum())
        lo, hi = stats.binom.interval(0.9973, n, 0.2)
        assert lo <= count <= hi

    def test_seed_determinism(self):
        mix = symmetric_mixture(d=2)
        np.testing.assert_array_equal(sample_target(mix, 50, 7), sample_target(mix, 50, 7))
