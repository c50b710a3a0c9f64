import math

import numpy as np
import pytest
from scipy import stats

from w2lab.errors import NumericalError, ValidationError
from w2lab.gaussian_exact import sampler_law
from w2lab.sampler import (
    SamplerConfig,
    ScoreModel,
    ddpm_run,
    follmer_run,
    make_perturbed_score,
    run_trajectory,
    step_noise,
)
from w2lab.schedules import constant_schedule, cosine_schedule, geometric_schedule, harmonic_schedule
from w2lab.targets import (
    ConstantProfile,
    GaussianMixtureTarget,
    SphericalGaussianTarget,
    SqrtBlowupProfile,
    score_exact,
)

GAUSS = SphericalGaussianTarget([1.0, -2.0], 4.0)
MIX = GaussianMixtureTarget([0.4, 0.6], [[-2.0, 0.0], [1.0, 1.0]], [0.3, 1.2])


class ZeroScore(ScoreModel):
    def __call__(self, t, y, rng=None):
        return np.zeros_like(np.asarray(y, dtype=float))


class NanScore(ScoreModel):
    def __call__(self, t, y, rng=None):
        out = np.zeros_like(np.asarray(y, dtype=float))
        if t > 0.5:
            out[3] = np.nan
        return out


def z_scores(samples, mean, var):
    n = samples.shape[0]
    zm = np.abs(samples.mean(0) - mean) / math.sqrt(var / n)
    zv = np.abs(samples.var(0, ddof=1) - var) / (var * math.sqrt(2 / (n - 1)))
    return zm.max(), zv.max()


class TestDDPM:
    @pytest.mark.parametrize(
        "sched", [harmonic_schedule(32), cosine_schedule(32, s=0.0), constant_schedule(32, 0.1)]
    )
    def test_standard_normal_is_preserved(self, sched):
        n = 10**5
        target = SphericalGaussianTarget(np.zeros(2), 1.0)
        y = ddpm_run(sched, target, SamplerConfig(np.zeros(2), n, seed=5))
        cov = np.cov(y.T)
        # each covariance entry of N(0, I) has standard error <= sqrt(2/n)
        assert np.all(np.abs(cov - np.eye(2)) <= 5 * math.sqrt(2 / n))
        assert np.all(np.abs(y.mean(0)) <= 5 / math.sqrt(n))

    @pytest.mark.parametrize("sched", [harmonic_schedule(64), geometric_schedule(64, 2.0, 4.0, 1e-2)])
    def test_gaussian_moments_match_recursion(self, sched):
        n = 40000
        mu_hat = np.array([0.0, 0.5])
        y = ddpm_run(sched, GAUSS, SamplerConfig(mu_hat, n, seed=9))
        mean, var = sampler_law(sched, GAUSS, mu_hat)
        zm, zv = z_scores(y, mean, var)
        assert zm <= 5 and zv <= 5

    def test_seed_determinism(self):
        cfg = SamplerConfig(np.zeros(2), 100, seed=123)
        a = ddpm_run(harmonic_schedule(16), MIX, cfg)
        b = ddpm_run(harmonic_schedule(16), MIX, cfg)
        assert a.tobytes() == b.tobytes()
        c = ddpm_run(harmonic_schedule(16), MIX, SamplerConfig(np.zeros(2), 100, seed=124))
        assert not np.array_equal(a, c)

    def test_chain_draws_do_not_depend_on_chain_count(self):
        a = ddpm_run(harmonic_schedule(16), MIX, SamplerConfig(np.zeros(2), 10, seed=4))
        b = ddpm_run(harmonic_schedule(16), MIX, SamplerConfig(np.zeros(2), 4, seed=4))
        np.testing.assert_array_equal(a[:4], b)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            SamplerConfig(np.zeros(2), 0, seed=1)
        with pytest.raises(ValidationError, match="mu_hat"):
            ddpm_run(harmonic_schedule(4), GAUSS, SamplerConfig(np.zeros(3), 5, seed=1))
        other = SphericalGaussianTarget([1.0, -2.0], 4.0)
        with pytest.raises(ValidationError, match="different target"):
            ddpm_run(harmonic_schedule(4), GAUSS, SamplerConfig(np.zeros(2), 5, 1, ScoreModel(other)))

    def test_non_finite_score_reports_chain_and_step(self):
        model = NanScore(GAUSS)
        with pytest.raises(NumericalError, match=r"chains \[3\]"):
            ddpm_run(harmonic_schedule(8), GAUSS, SamplerConfig(np.zeros(2), 6, 1, model))

    def test_decreasing_profile_rejected(self):
        bad = ScoreModel(GAUSS, "perturbed", lambda t: 1.0 - np.asarray(t), "constant", np.array([1.0, 0.0]))
        with pytest.raises(ValidationError, match="non-decreasing"):
            ddpm_run(harmonic_schedule(8), GAUSS, SamplerConfig(np.zeros(2), 3, 1, bad))


class TestFollmer:
    @pytest.mark.parametrize("target", [GAUSS, MIX], ids=["gauss", "mixture"])
    @pytest.mark.parametrize(
        "sched",
        [harmonic_schedule(64), cosine_schedule(64), geometric_schedule(128, 2.0, 4.0, 1e-3)],
        ids=["harmonic", "cosine", "geometric"],
    )
    @pytest.mark.parametrize("mode", ["exact", "constant", "random"])
    def test_pathwise_equivalence(self, target, sched, mode):
        model = ScoreModel(target) if mode == "exact" else make_perturbed_score(
            target, SqrtBlowupProfile(0.05), mode=mode
        )
        cfg = SamplerConfig(np.array([0.5, -0.5]), 1000, seed=31, score_model=model)
        a, b = ddpm_run(sched, target, cfg), follmer_run(sched, target, cfg)
        rel = np.linalg.norm(a - b, axis=1) / np.maximum(np.linalg.norm(a, axis=1), 1.0)
        assert rel.max() <= 1e-10

    def test_single_step_law(self):
        sched = constant_schedule(1, 0.6)
        mu_hat = np.array([1.0, 1.0])
        x = follmer_run(sched, GAUSS, SamplerConfig(mu_hat, 40000, seed=2))
        mean, var = sampler_law(sched, GAUSS, mu_hat)
        zm, zv = z_scores(x, mean, var)
        assert zm <= 5 and zv <= 5

    def test_zero_score_variance_accumulation(self):
        sched = cosine_schedule(16, 0.008)
        t, h = sched.times, sched.steps
        var = t[0]
        for i in range(sched.n_steps):
            var = (1 + h[i] / t[i]) ** 2 * var + h[i]
        n = 40000
        target = SphericalGaussianTarget(np.zeros(2), 1.0)
        x = follmer_run(sched, target, SamplerConfig(np.zeros(2), n, 8, ZeroScore(target)))
        x_t = x * math.sqrt(t[-1])
        _, zv = z_scores(x_t, np.zeros(2), var)
        assert zv <= 5


class TestPerturbedScore:
    def test_zero_profile_gives_exact_model(self):
        assert make_perturbed_score(GAUSS, 0.0).kind == "exact"
        assert make_perturbed_score(GAUSS, None).kind == "exact"

    def test_constant_mode_error_size(self):
        model = make_perturbed_score(GAUSS, 0.1, direction=[3.0, 4.0])
        y = np.random.default_rng(0).normal(size=(5, 2))
        diff = model(0.4, y) - score_exact(GAUSS, 0.4, y)
        np.testing.assert_allclose(np.linalg.norm(diff, axis=1), 0.1, rtol=1e-12)
        np.testing.assert_allclose(diff[0], [0.06, 0.08], rtol=1e-12)

    def test_random_mode_error_size(self):
        model = make_perturbed_score(MIX, SqrtBlowupProfile(0.1), mode="random")
        y = np.random.default_rng(0).normal(size=(50, 2))
        diff = model(0.75, y, np.random.default_rng(1)) - score_exact(MIX, 0.75, y)
        np.testing.assert_allclose(np.linalg.norm(diff, axis=1), 0.2, rtol=1e-12)
        with pytest.raises(ValidationError):
            model(0.75, y)

    def test_bad_options(self):
        with pytest.raises(ValidationError):
            make_perturbed_score(GAUSS, 0.1, mode="adversarial")
        with pytest.raises(ValidationError):
            make_perturbed_score(GAUSS, 0.1, direction=[0.0, 0.0])

    def test_constant_shift_matches_extended_recursion(self):
        sched = harmonic_schedule(32)
        model = make_perturbed_score(GAUSS, ConstantProfile(0.1))
        mu_hat = GAUSS.mean.copy()
        y = ddpm_run(sched, GAUSS, SamplerConfig(mu_hat, 40000, seed=77, score_model=model))
        mean, var = sampler_law(sched, GAUSS, mu_hat, model)
        exact_mean, _ = sampler_law(sched, GAUSS, mu_hat)
        assert np.linalg.norm(mean - exact_mean) > 0.02  # the shift is resolvable
        zm, zv = z_scores(y, mean, var)
        assert zm <= 5 and zv <= 5

    def test_sqrt_profile_monotone_on_grid(self):
        sched = cosine_schedule(256, 0.008)
        assert SqrtBlowupProfile(0.05).is_non_decreasing(sched.times[:-1])


class TestTrajectory:
    def test_first_row_and_last_row(self):
        sched = harmonic_schedule(20)
        mu_hat = np.array([1.0, 2.0])
        cfg = SamplerConfig(mu_hat, 8, seed=3)
        path = run_trajectory(sched, MIX, cfg, 5)
        assert path.shape == (21, 2)
        expected0 = math.sqrt(sched.t0) * mu_hat + step_noise(3, 0, 8, 2)[5]
        np.testing.assert_array_equal(path[0], expected0)
        assert path[-1].tobytes() == ddpm_run(sched, MIX, cfg)[5].tobytes()

    def test_out_of_range(self):
        cfg = SamplerConfig(np.zeros(2), 4, seed=3)
        for idx in (-1, 4):
            with pytest.raises(IndexError):
                run_trajectory(harmonic_schedule(4), MIX, cfg, idx)

    def test_innovations_are_standard_normal(self):
        # for N(0, I) the DDPM step is Y' = sqrt(1-b) Y + sqrt(b) Z
        sched = constant_schedule(10**4, 1e-3)
        target = SphericalGaussianTarget(np.zeros(1), 1.0)
        path = run_trajectory(sched, target, SamplerConfig(np.zeros(1), 1, seed=12), 0)[:, 0]
        b = sched.betas
        innov = (path[1:] - np.sqrt(1 - b) * path[:-1]) / np.sqrt(b)
        assert stats.kstest(innov, "norm").pvalue > 1e-3
